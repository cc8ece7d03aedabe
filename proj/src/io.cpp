#include "latmom/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "latmom/errors.hpp"

namespace latmom {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == ',' && !quoted)) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

std::string format_time(double t) {
  std::ostringstream s;
  s << std::setprecision(17) << t;
  return s.str();
}

using RowKey = std::pair<std::string, double>;

std::map<RowKey, std::size_t> row_index(const PanelData& data) {
  std::map<RowKey, std::size_t> idx;
  for (std::size_t r = 0; r < data.n_obs(); ++r) idx[{data.subject_ids[data.subject[r]], data.time[r]}] = r;
  return idx;
}

// Maps each table row onto a panel row; every panel row must be covered once.
std::vector<std::size_t> align(const CsvTable& table, const PanelData& data) {
  const auto idx = row_index(data);
  const std::size_t c_id = table.column("subject_id");
  const std::size_t c_time = table.column("time");
  std::vector<std::size_t> map(table.rows.size());
  std::vector<bool> seen(data.n_obs(), false);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto it = idx.find({table.rows[i][c_id], table.number(i, c_time)});
    if (it == idx.end()) {
      throw DataError(table.where(i) + ": (" + table.rows[i][c_id] + ", " + table.rows[i][c_time] +
                      ") is not an observation of the panel");
    }
    if (seen[it->second]) throw DataError(table.where(i) + ": duplicated observation");
    seen[it->second] = true;
    map[i] = it->second;
  }
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    if (!seen[r]) {
      throw DataError(table.source + ": no row for subject " + data.subject_ids[data.subject[r]] +
                      " at time " + format_time(data.time[r]));
    }
  }
  return map;
}

}  // namespace

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(source + ": missing required column '" + std::string(name) + "'");
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header) {
    if (h == name) return true;
  }
  return false;
}

std::string CsvTable::where(std::size_t row) const {
  return source + " line " + std::to_string(line_numbers[row]);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows[row][col];
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError(where(row) + ": column '" + header[col] + "' is not a finite number: '" + s + "'");
  }
  return v;
}

CsvTable read_csv(std::istream& in, std::string source) {
  CsvTable t;
  t.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      std::set<std::string> unique(t.header.begin(), t.header.end());
      if (unique.size() != t.header.size()) throw DataError(t.source + ": duplicated column names in header");
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(t.source + " line " + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw DataError(t.source + ": missing header row");
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_csv(in, path);
}

PanelData read_panel(const CsvTable& table, const std::vector<std::string>& covariates) {
  const std::size_t c_id = table.column("subject_id");
  const std::size_t c_time = table.column("time");
  const std::size_t c_y = table.column("y");
  std::vector<std::string> names;
  std::vector<std::size_t> cols;
  if (covariates.empty()) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      if (j == c_id || j == c_time || j == c_y) continue;
      names.push_back(table.header[j]);
      cols.push_back(j);
    }
  } else {
    for (const auto& name : covariates) {
      names.push_back(name);
      cols.push_back(table.column(name));
    }
  }
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError(table.source + ": no data rows");
  std::vector<std::string> ids(n);
  std::vector<double> times(n);
  std::vector<int> y(n);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = table.rows[i][c_id];
    if (ids[i].empty()) throw DataError(table.where(i) + ": empty subject_id");
    times[i] = table.number(i, c_time);
    const std::string& ys = table.rows[i][c_y];
    if (ys != "0" && ys != "1") {
      throw DataError(table.where(i) + ": y must be 0 or 1, found '" + ys + "'");
    }
    y[i] = ys == "1" ? 1 : 0;
    for (std::size_t j = 0; j < cols.size(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table.number(i, cols[j]);
    }
  }
  return make_panel(ids, times, y, names, x);
}

PanelData load_panel(const std::string& path, const std::vector<std::string>& covariates) {
  return read_panel(read_csv_file(path), covariates);
}

void read_membership(PanelData& data, const CsvTable& table) {
  const std::size_t c_id = table.column("subject_id");
  const std::size_t c_group = table.column("group_id");
  const std::size_t c_w = table.column("weight");
  std::vector<std::string> groups;
  std::map<std::string, std::size_t> group_pos;
  for (const auto& row : table.rows) {
    if (group_pos.emplace(row[c_group], groups.size()).second) groups.push_back(row[c_group]);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.n_subjects()),
                                            static_cast<Eigen::Index>(groups.size()));
  std::vector<bool> present(data.n_subjects(), false);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto s = data.subject_index(table.rows[i][c_id]);
    if (!s) throw DataError(table.where(i) + ": subject '" + table.rows[i][c_id] + "' is not in the panel");
    const double weight = table.number(i, c_w);
    if (weight < 0.0) throw DataError(table.where(i) + ": negative membership weight");
    w(static_cast<Eigen::Index>(*s), static_cast<Eigen::Index>(group_pos.at(table.rows[i][c_group]))) += weight;
    present[*s] = true;
  }
  for (std::size_t s = 0; s < data.n_subjects(); ++s) {
    if (!present[s]) throw DataError(table.source + ": no membership weights for subject " + data.subject_ids[s]);
    const double total = w.row(static_cast<Eigen::Index>(s)).sum();
    if (std::abs(total - 1.0) > 1e-6) {
      std::ostringstream msg;
      msg << table.source << ": membership weights of subject " << data.subject_ids[s] << " sum to "
          << total << " (must be 1 within 1e-6)";
      throw DataError(msg.str());
    }
    w.row(static_cast<Eigen::Index>(s)) /= total;
  }
  set_membership(data, groups, w);
}

void load_membership(PanelData& data, const std::string& path) {
  read_membership(data, read_csv_file(path));
}

Standardization fit_standardization(const PanelData& data, const std::vector<std::string>& columns) {
  Standardization s;
  for (const auto& name : columns) {
    const auto idx = data.covariate_index(name);
    if (!idx) throw DataError("cannot standardize '" + name + "': not a panel covariate");
    const Eigen::VectorXd col = data.covariates.col(static_cast<Eigen::Index>(*idx));
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / std::max<double>(1.0, static_cast<double>(col.size() - 1)));
    if (!(sd > 0.0)) throw DataError("cannot standardize '" + name + "': zero variance");
    s.columns.push_back(name);
    s.mean.push_back(mean);
    s.sd.push_back(sd);
  }
  return s;
}

void apply_standardization(PanelData& data, const Standardization& s) {
  for (std::size_t j = 0; j < s.columns.size(); ++j) {
    const auto idx = data.covariate_index(s.columns[j]);
    if (!idx) throw DataError("cannot standardize '" + s.columns[j] + "': not a panel covariate");
    auto col = data.covariates.col(static_cast<Eigen::Index>(*idx));
    col = (col.array() - s.mean[j]) / s.sd[j];
  }
}

void write_standardization(std::ostream& out, const Standardization& s) {
  out << std::setprecision(17) << "column,mean,sd\n";
  for (std::size_t j = 0; j < s.columns.size(); ++j) {
    out << s.columns[j] << ',' << s.mean[j] << ',' << s.sd[j] << '\n';
  }
}

Standardization read_standardization(const CsvTable& table) {
  const std::size_t c_col = table.column("column");
  const std::size_t c_mean = table.column("mean");
  const std::size_t c_sd = table.column("sd");
  Standardization s;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    s.columns.push_back(table.rows[i][c_col]);
    s.mean.push_back(table.number(i, c_mean));
    s.sd.push_back(table.number(i, c_sd));
    if (!(s.sd.back() > 0.0)) throw DataError(table.where(i) + ": sd must be positive");
  }
  return s;
}

void write_panel(std::ostream& out, const PanelData& data) {
  out << "subject_id,time,y";
  for (const auto& name : data.covariate_names) out << ',' << name;
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    out << data.subject_ids[data.subject[r]] << ',' << data.time[r] << ',' << data.y[r];
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) {
      out << ',' << data.covariates(static_cast<Eigen::Index>(r), j);
    }
    out << '\n';
  }
}

void write_truth(std::ostream& out, const SimulatedPanel& panel) {
  const PanelData& data = panel.data;
  out << "subject_id,time,mu,sigma,nu,tau,event_prob,holdout_y\n" << std::setprecision(17);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    out << data.subject_ids[data.subject[r]] << ',' << data.time[r] << ',' << panel.truth.mu[r] << ','
        << panel.truth.sigma[r] << ',' << panel.truth.nu[r] << ',' << panel.truth.tau[r] << ','
        << panel.truth.event_prob[r] << ',' << panel.holdout_y[r] << '\n';
  }
}

void write_probs(std::ostream& out, const PanelData& data, const std::vector<double>& prob,
                 const std::vector<double>& lower, const std::vector<double>& upper) {
  const bool intervals = !lower.empty() && !upper.empty();
  out << "subject_id,time,prob" << (intervals ? ",lower,upper" : "") << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    out << data.subject_ids[data.subject[r]] << ',' << data.time[r] << ',' << prob[r];
    if (intervals) out << ',' << lower[r] << ',' << upper[r];
    out << '\n';
  }
}

std::vector<double> read_probs(const CsvTable& table, const PanelData& data) {
  const std::size_t c_p = table.column("prob");
  const auto map = align(table, data);
  std::vector<double> out(data.n_obs());
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double p = table.number(i, c_p);
    if (p < 0.0 || p > 1.0) throw DataError(table.where(i) + ": probability outside [0, 1]");
    out[map[i]] = p;
  }
  return out;
}

void write_moments(std::ostream& out, const PanelData& data,
                   const std::array<IntervalSummary, kMoments>& moments) {
  out << "subject_id,time";
  for (Moment m : kAllMoments) {
    const std::string n(moment_name(m));
    out << ',' << n << ',' << n << "_lower," << n << "_upper";
  }
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    out << data.subject_ids[data.subject[r]] << ',' << data.time[r];
    for (const auto& s : moments) out << ',' << s.mean[r] << ',' << s.lower[r] << ',' << s.upper[r];
    out << '\n';
  }
}

std::array<IntervalSummary, kMoments> read_moments(const CsvTable& table, const PanelData& data) {
  const auto map = align(table, data);
  std::array<IntervalSummary, kMoments> out;
  for (Moment m : kAllMoments) {
    const std::string n(moment_name(m));
    const std::size_t c = table.column(n);
    const std::size_t lo = table.column(n + "_lower");
    const std::size_t hi = table.column(n + "_upper");
    auto& s = out[index(m)];
    s.mean.assign(data.n_obs(), 0.0);
    s.lower.assign(data.n_obs(), 0.0);
    s.upper.assign(data.n_obs(), 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) {
      s.mean[map[i]] = table.number(i, c);
      s.lower[map[i]] = table.number(i, lo);
      s.upper[map[i]] = table.number(i, hi);
    }
  }
  return out;
}

TruthTable read_truth(const CsvTable& table, const PanelData& data, std::vector<int>* holdout_y) {
  const auto map = align(table, data);
  TruthTable t;
  std::array<std::vector<double>*, 5> cols{&t.mu, &t.sigma, &t.nu, &t.tau, &t.event_prob};
  const std::array<std::string, 5> names{"mu", "sigma", "nu", "tau", "event_prob"};
  for (std::size_t k = 0; k < cols.size(); ++k) {
    cols[k]->assign(data.n_obs(), 0.0);
    const std::size_t c = table.column(names[k]);
    for (std::size_t i = 0; i < map.size(); ++i) {
      const std::string& s = table.rows[i][c];
      (*cols[k])[map[i]] = (s == "nan" || s == "NaN") ? std::nan("") : table.number(i, c);
    }
  }
  if (holdout_y) {
    const std::size_t c = table.column("holdout_y");
    holdout_y->assign(data.n_obs(), 0);
    for (std::size_t i = 0; i < map.size(); ++i) {
      const std::string& s = table.rows[i][c];
      if (s != "0" && s != "1") throw DataError(table.where(i) + ": holdout_y must be 0 or 1");
      (*holdout_y)[map[i]] = s == "1" ? 1 : 0;
    }
  }
  return t;
}

PosteriorDraws read_draws(const CsvTable& table) {
  const std::size_t c_chain = table.column("chain");
  const std::size_t c_draw = table.column("draw");
  const std::size_t c_lp = table.column("lp__");
  PosteriorDraws d;
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j == c_chain || j == c_draw || j == c_lp) continue;
    d.names.push_back(table.header[j]);
    cols.push_back(j);
  }
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError(table.source + ": no draws");
  d.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
  std::map<long, std::size_t> per_chain;
  for (std::size_t i = 0; i < n; ++i) {
    ++per_chain[std::lround(table.number(i, c_chain))];
    d.log_density.push_back(table.number(i, c_lp));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = table.number(i, cols[j]);
    }
  }
  d.chains = per_chain.size();
  d.per_chain = per_chain.begin()->second;
  for (const auto& [chain, count] : per_chain) {
    if (count != d.per_chain) throw DataError(table.source + ": chains have different draw counts");
  }
  return d;
}

}  // namespace latmom
