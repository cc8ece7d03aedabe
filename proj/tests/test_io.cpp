#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fixtures.hpp"
#include "latmom/config.hpp"
#include "latmom/errors.hpp"
#include "latmom/io.hpp"

using namespace latmom;

namespace {

PanelData panel_from(const std::string& text, const std::vector<std::string>& covariates = {}) {
  std::istringstream in(text);
  return read_panel(read_csv(in, "panel.csv"), covariates);
}

void membership_from(PanelData& data, const std::string& text) {
  std::istringstream in(text);
  read_membership(data, read_csv(in, "weights.csv"));
}

std::string message_of(auto&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("minimal panel") {
  const PanelData d = panel_from("subject_id,time,y,age\nA,1,0,50\nA,2,1,51\nB,1,1,60\n");
  CHECK(d.n_subjects() == 2);
  CHECK(d.n_obs() == 3);
  CHECK(d.covariate_names == std::vector<std::string>{"age"});
  CHECK(d.covariates(2, 0) == 60.0);
  CHECK(d.y == std::vector<int>{0, 1, 1});
}

TEST_CASE("csv details") {
  const PanelData d = panel_from("\xEF\xBB\xBF# produced elsewhere\nsubject_id,time,y,\"x, quoted\"\n\n\"A\",1,1,2.5\n");
  CHECK(d.covariate_names == std::vector<std::string>{"x, quoted"});
  CHECK(d.covariates(0, 0) == 2.5);
  const PanelData sub = panel_from("subject_id,time,y,a,b\nA,1,0,1,2\n", {"b"});
  CHECK(sub.covariate_names == std::vector<std::string>{"b"});
}

TEST_CASE("row-level diagnostics") {
  CHECK(message_of([] { panel_from("subject_id,time\nA,1\n"); }).find("y") != std::string::npos);
  const std::string y2 = message_of([] { panel_from("subject_id,time,y\nA,1,0\nA,2,2\n"); });
  CHECK(y2.find("line 3") != std::string::npos);
  const std::string bad = message_of([] { panel_from("subject_id,time,y,x\nA,1,0,abc\n"); });
  CHECK(bad.find("line 2") != std::string::npos);
  CHECK(bad.find("abc") != std::string::npos);
  CHECK_THROWS_AS(panel_from("subject_id,time,y\nA,1,0,7\n"), DataError);
  CHECK_THROWS_AS(panel_from("subject_id,time,y,y\nA,1,0,1\n"), DataError);
}

TEST_CASE("membership weights") {
  PanelData d = panel_from("subject_id,time,y\nA,1,0\nB,1,1\n");
  membership_from(d, "subject_id,group_id,weight\nA,G1,0.5\nA,G2,0.5000004\nB,G2,1\n");
  CHECK(d.membership.row(0).sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.group_ids.size() == 2);

  PanelData e = panel_from("subject_id,time,y\nA,1,0\nB,1,1\n");
  const std::string msg = message_of([&] { membership_from(e, "subject_id,group_id,weight\nA,G1,1\nB,G1,0.5\nB,G2,0.3\n"); });
  CHECK(msg.find("subject B ") != std::string::npos);
  CHECK_THROWS_AS(membership_from(e, "subject_id,group_id,weight\nA,G1,1\nB,G1,0.5\nB,G2,0.3\n"), DataError);
  CHECK_THROWS_AS(membership_from(e, "subject_id,group_id,weight\nA,G1,1\nB,G1,-1\nB,G2,2\n"), DataError);
}

TEST_CASE("simulated panel round-trips") {
  SimDesign design;
  design.n_subjects = 40;
  const SimulatedPanel sim = simulate_panel(design, 5);
  std::stringstream buf;
  write_panel(buf, sim.data);
  const PanelData back = read_panel(read_csv(buf, "panel.csv"));
  CHECK(back.subject_ids == sim.data.subject_ids);
  CHECK(back.subject == sim.data.subject);
  CHECK(back.time == sim.data.time);
  CHECK(back.y == sim.data.y);
  CHECK(back.covariate_names == sim.data.covariate_names);
  CHECK(back.covariates == sim.data.covariates);

  std::stringstream tbuf;
  write_truth(tbuf, sim);
  std::vector<int> holdout;
  const TruthTable t = read_truth(read_csv(tbuf, "truth.csv"), back, &holdout);
  CHECK(t.event_prob == sim.truth.event_prob);
  CHECK(t.tau == sim.truth.tau);
  CHECK(holdout == sim.holdout_y);

  std::vector<double> p(back.n_obs());
  for (std::size_t r = 0; r < p.size(); ++r) p[r] = 1.0 / (r + 3.0);
  std::stringstream pbuf;
  write_probs(pbuf, back, p);
  CHECK(read_probs(read_csv(pbuf, "probs.csv"), back) == p);
}

TEST_CASE("standardization") {
  PanelData d = fixtures::random_panel(20, 3, 6);
  const Standardization s = fit_standardization(d, {"a"});
  apply_standardization(d, s);
  const Eigen::VectorXd a = d.covariates.col(0);
  CHECK(std::abs(a.mean()) < 1e-12);
  CHECK(std::sqrt((a.array() - a.mean()).square().sum() / (a.size() - 1)) == doctest::Approx(1.0));
  std::stringstream buf;
  write_standardization(buf, s);
  const Standardization back = read_standardization(read_csv(buf, "standardization.csv"));
  CHECK(back.columns == s.columns);
  CHECK(back.mean == s.mean);
  CHECK(back.sd == s.sd);

  PanelData flat = panel_from("subject_id,time,y,c\nA,1,0,3\nA,2,1,3\n");
  CHECK_THROWS_AS(fit_standardization(flat, {"c"}), DataError);
}

}

TEST_SUITE("config") {

TEST_CASE("defaults and round trip") {
  const RunConfig c = parse_config(nlohmann::json::object());
  CHECK(c.fit.sampler.chains == 4);
  CHECK(c.surface.points == std::array<std::size_t, 4>{40, 6, 12, 12});
  const RunConfig back = parse_config(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("unknown keys are rejected by name") {
  const auto j = nlohmann::json::parse(R"({"sampler": {"chians": 2}})");
  const std::string msg = message_of([&] { parse_config(j); });
  CHECK(msg.find("sampler.chians") != std::string::npos);
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"sampler": {"chains": "four"}})")), ConfigError);
  CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"design": {"n_subjects": 0}})")), ConfigError);
}

TEST_CASE("dotted overrides") {
  nlohmann::json j = nlohmann::json::object();
  set_json_path(j, "sampler.chains", "2");
  set_json_path(j, "design.scenario", "skew_t");
  set_json_path(j, "output_dir", "somewhere");
  CHECK(j["sampler"]["chains"] == 2);
  CHECK(j["design"]["scenario"] == "skew_t");
  const RunConfig c = parse_config(j);
  CHECK(c.fit.sampler.chains == 2);
  CHECK(c.design.scenario == Scenario::SkewT);
}

TEST_CASE("hash ignores locations and threads only") {
  RunConfig a = parse_config(nlohmann::json::object());
  RunConfig b = a;
  b.output_dir = "elsewhere";
  b.data.panel = "/tmp/panel.csv";
  b.replicate.threads = 4;
  CHECK(config_hash(a) == config_hash(b));
  b.seed += 1;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hex64(255) == "00000000000000ff");
}

}
