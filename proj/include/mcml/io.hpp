#pragma once

// Files in and out: dataset CSV, JSON config with dotted overrides, result
// JSON, trace / summary / replicate CSVs. Every file is written to a
// temporary name and renamed into place.

#include <mcml/mcml_fitter.hpp>
#include <mcml/sim_bench.hpp>

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace mcml::io {

using nlohmann::json;
namespace fs = std::filesystem;

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput(detail::concat("cannot open ", tmp.string(), " for writing"));
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw InvalidInput(detail::concat("failed writing ", tmp.string()));
    }
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput(detail::concat("cannot read ", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- dataset CSV

struct Dataset {
  ModelData data;
  Vector trials;  // empty unless the file has a trials column
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto a = f.find_first_not_of(" \t");
    const auto b = f.find_last_not_of(" \t");
    f = a == std::string::npos ? std::string() : f.substr(a, b - a + 1);
  }
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const std::string& field) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw InvalidInput(mcml::detail::concat("line ", line, ", field '", field,
                                            "': not a finite number: '", s, "'"));
  }
  return v;
}

}  // namespace detail

inline Dataset parse_dataset_csv(const std::string& text) {
  using mcml::detail::concat;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw InvalidInput("dataset CSV is empty");
  if (header.size() < 4 || header[0] != "coord_x" || header[1] != "coord_y" || header[2] != "y") {
    throw InvalidInput(concat("line ", line_no,
                              ": header must start with coord_x,coord_y,y and list x1..xP"));
  }
  const bool has_trials = header[3] == "trials";
  const std::size_t first_x = has_trials ? 4 : 3;
  if (header.size() <= first_x) throw InvalidInput("dataset CSV has no covariate columns");
  for (std::size_t j = first_x; j < header.size(); ++j) {
    const std::string want = concat("x", j - first_x + 1);
    if (header[j] != want) {
      throw InvalidInput(concat("line ", line_no, ": column ", j + 1, " is '", header[j],
                                "', expected '", want, "'"));
    }
  }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size()) {
      throw InvalidInput(concat("line ", line_no, ": expected ", header.size(), " fields, got ",
                                f.size()));
    }
    std::vector<double> r(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) r[j] = detail::parse_double(f[j], line_no, header[j]);
    const double y = r[2];
    if (y < 0.0 || y != std::floor(y)) {
      throw InvalidInput(concat("line ", line_no, ": y = ", f[2], " must be a non-negative integer"));
    }
    if (has_trials) {
      if (r[3] < 1.0 || r[3] != std::floor(r[3])) {
        throw InvalidInput(concat("line ", line_no, ": trials = ", f[3],
                                  " must be a positive integer"));
      }
      if (y > r[3]) {
        throw InvalidInput(concat("line ", line_no, ": y = ", f[2], " exceeds trials = ", f[3]));
      }
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InvalidInput("dataset CSV has a header but no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(header.size() - first_x);
  Dataset ds;
  ds.data.coords.resize(n, 2);
  ds.data.y.resize(n);
  ds.data.X.resize(n, p);
  if (has_trials) ds.trials.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    ds.data.coords(i, 0) = r[0];
    ds.data.coords(i, 1) = r[1];
    ds.data.y[i] = r[2];
    if (has_trials) ds.trials[i] = r[3];
    for (Eigen::Index j = 0; j < p; ++j) ds.data.X(i, j) = r[first_x + static_cast<std::size_t>(j)];
  }
  ds.data.Z = Matrix::Identity(n, n);
  return ds;
}

inline Dataset read_dataset_csv(const fs::path& path) {
  return parse_dataset_csv(read_file(path));
}

inline std::string dataset_csv(const ModelData& data, const Family& family) {
  const bool binom = family.kind == FamilyKind::BinomialLogit;
  std::ostringstream out;
  out << "coord_x,coord_y,y";
  if (binom) out << ",trials";
  for (Eigen::Index j = 0; j < data.p(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    out << fmt(data.coords(i, 0)) << ',' << fmt(data.coords(i, 1)) << ',' << fmt(data.y[i]);
    if (binom) out << ',' << fmt(family.trials[i]);
    for (Eigen::Index j = 0; j < data.p(); ++j) out << ',' << fmt(data.X(i, j));
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- config JSON

struct AppConfig {
  FamilyKind family = FamilyKind::PoissonLog;
  FitConfig fit;
  ScenarioSpec scenario;
};

namespace detail {

inline void check_keys(const json& obj, const std::string& where,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw InvalidInput(mcml::detail::concat("config: '", where, "' must be an object"));
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      throw InvalidInput(mcml::detail::concat("config: unknown key '", where.empty() ? "" : where + ".",
                                              key, "'"));
    }
  }
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidInput(mcml::detail::concat("config: '", where, ".", key, "' has the wrong type"));
  }
}

template <typename T>
void maybe(const json& obj, const std::string& key, const std::string& where, T& out) {
  if (obj.contains(key)) out = get_as<T>(obj, key, where);
}

inline FamilyKind parse_family(const std::string& s) {
  if (s == "poisson") return FamilyKind::PoissonLog;
  if (s == "binomial") return FamilyKind::BinomialLogit;
  throw InvalidInput(mcml::detail::concat("config: family.kind must be 'poisson' or 'binomial', got '", s, "'"));
}

inline CovarianceParams parse_theta(const json& obj, const std::string& where) {
  check_keys(obj, where, {"tau2", "lambda"});
  const double tau2 = get_as<double>(obj, "tau2", where);
  const double lambda = get_as<double>(obj, "lambda", where);
  mcml::detail::require(tau2 > 0.0 && lambda > 0.0,
                        mcml::detail::concat("config: ", where, " needs tau2 > 0 and lambda > 0"));
  return CovarianceParams::from_raw(tau2, lambda);
}

}  // namespace detail

inline AppConfig config_from_json(const json& j) {
  using detail::maybe;
  detail::check_keys(j, "", {"family", "covariance", "stopping", "sampling", "scenario"});
  AppConfig c;
  if (j.contains("family")) {
    const json& f = j.at("family");
    detail::check_keys(f, "family", {"kind"});
    if (f.contains("kind")) c.family = detail::parse_family(detail::get_as<std::string>(f, "kind", "family"));
  }
  if (j.contains("covariance")) {
    const json& cv = j.at("covariance");
    detail::check_keys(cv, "covariance", {"init"});
    if (cv.contains("init")) {
      const json& init = cv.at("init");
      if (init.is_string()) {
        if (init.get<std::string>() != "auto") {
          throw InvalidInput("config: covariance.init must be \"auto\" or {tau2, lambda}");
        }
      } else {
        c.fit.covariance_init = detail::parse_theta(init, "covariance.init");
      }
    }
  }
  if (j.contains("stopping")) {
    const json& s = j.at("stopping");
    detail::check_keys(s, "stopping", {"t0", "bf_threshold", "min_iterations", "max_iterations"});
    maybe(s, "t0", "stopping", c.fit.stopping.t0);
    maybe(s, "bf_threshold", "stopping", c.fit.stopping.bf_threshold);
    maybe(s, "min_iterations", "stopping", c.fit.stopping.min_iterations);
    maybe(s, "max_iterations", "stopping", c.fit.stopping.max_iterations);
  }
  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    detail::check_keys(s, "sampling",
                       {"p_mc", "m_min", "m_max", "m_fixed", "seed", "ess_floor", "guess"});
    maybe(s, "p_mc", "sampling", c.fit.sampling.p_mc);
    maybe(s, "m_min", "sampling", c.fit.sampling.m_min);
    maybe(s, "m_max", "sampling", c.fit.sampling.m_max);
    if (s.contains("m_fixed") && !s.at("m_fixed").is_null()) {
      c.fit.sampling.m_fixed = detail::get_as<int>(s, "m_fixed", "sampling");
    }
    maybe(s, "seed", "sampling", c.fit.seed);
    maybe(s, "ess_floor", "sampling", c.fit.ess_floor);
    if (s.contains("guess") && !s.at("guess").is_null()) {
      const json& g = s.at("guess");
      detail::check_keys(g, "sampling.guess", {"beta", "tau2", "lambda"});
      const auto beta = detail::get_as<std::vector<double>>(g, "beta", "sampling.guess");
      json th = {{"tau2", g.value("tau2", json())}, {"lambda", g.value("lambda", json())}};
      c.fit.sample_size_guess =
          ParameterGuess{Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size())),
                         detail::parse_theta(th, "sampling.guess")};
    }
  }
  if (j.contains("scenario")) {
    const json& s = j.at("scenario");
    detail::check_keys(s, "scenario",
                       {"design", "cells_per_dim", "n", "trials", "beta0", "beta1", "tau2", "lambda",
                        "replicates", "base_seed", "size_from_truth"});
    if (s.contains("design")) {
      const auto d = detail::get_as<std::string>(s, "design", "scenario");
      if (d == "poisson_grid") {
        c.scenario.design = DesignKind::PoissonGrid;
      } else if (d == "binomial_uniform") {
        c.scenario.design = DesignKind::BinomialUniform;
      } else {
        throw InvalidInput("config: scenario.design must be 'poisson_grid' or 'binomial_uniform'");
      }
    }
    maybe(s, "cells_per_dim", "scenario", c.scenario.cells_per_dim);
    maybe(s, "n", "scenario", c.scenario.n);
    maybe(s, "trials", "scenario", c.scenario.trials);
    maybe(s, "beta0", "scenario", c.scenario.beta0);
    maybe(s, "beta1", "scenario", c.scenario.beta1);
    maybe(s, "tau2", "scenario", c.scenario.tau2);
    maybe(s, "lambda", "scenario", c.scenario.lambda);
    maybe(s, "replicates", "scenario", c.scenario.replicates);
    maybe(s, "base_seed", "scenario", c.scenario.base_seed);
    maybe(s, "size_from_truth", "scenario", c.scenario.size_from_truth);
  }
  c.fit.validate();
  c.scenario.validate();
  return c;
}

// key=value with a dotted key; the value is read as JSON when it parses,
// otherwise as a plain string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidInput(mcml::detail::concat("--set expects key=value, got '", assignment, "'"));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw InvalidInput(mcml::detail::concat("--set: malformed key '", key, "'"));
    if (!node->is_object()) {
      throw InvalidInput(mcml::detail::concat("--set: '", key, "' descends into a non-object"));
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(mcml::detail::concat(source, ": ", e.what()));
  }
}

inline AppConfig load_config(const std::optional<fs::path>& path,
                             const std::vector<std::string>& overrides) {
  json j = path ? parse_json_text(read_file(*path), path->string()) : json::object();
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

// ---------------------------------------------------------------- JSON writer

// Minimal emitter so that every double is printed with %.17g.
class JsonWriter {
 public:
  JsonWriter& begin_object() { open('{'); return *this; }
  JsonWriter& end_object() { close('}'); return *this; }
  JsonWriter& begin_array() { open('['); return *this; }
  JsonWriter& end_array() { close(']'); return *this; }

  JsonWriter& key(const std::string& k) {
    separator();
    out_ << quote(k) << ": ";
    pending_key_ = true;
    return *this;
  }
  JsonWriter& value(double x) { return raw(std::isfinite(x) ? fmt(x) : "null"); }
  JsonWriter& value(int x) { return raw(std::to_string(x)); }
  JsonWriter& value(long long x) { return raw(std::to_string(x)); }
  JsonWriter& value(std::uint64_t x) { return raw(std::to_string(x)); }
  JsonWriter& null_value() { return raw("null"); }
  JsonWriter& value(bool x) { return raw(x ? "true" : "false"); }
  JsonWriter& value(const std::string& s) { return raw(quote(s)); }
  JsonWriter& value(const char* s) { return raw(quote(s)); }
  JsonWriter& value(const Vector& v) {
    begin_array();
    for (Eigen::Index i = 0; i < v.size(); ++i) value(v[i]);
    return end_array();
  }
  JsonWriter& value(const Matrix& m) {
    begin_array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) value(Vector(m.row(i).transpose()));
    return end_array();
  }
  template <typename T>
  JsonWriter& field(const std::string& k, const T& v) {
    key(k);
    return value(v);
  }

  std::string str() const { return out_.str() + "\n"; }

 private:
  static std::string quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      switch (c) {
        case '"': q += "\\\""; break;
        case '\\': q += "\\\\"; break;
        case '\n': q += "\\n"; break;
        case '\t': q += "\\t"; break;
        case '\r': q += "\\r"; break;
        default:
          if (static_cast<unsigned char>(c) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", c);
            q += buf;
          } else {
            q += c;
          }
      }
    }
    return q + "\"";
  }
  void separator() {
    if (pending_key_) return;
    if (!first_.empty()) {
      if (!first_.back()) out_ << ',';
      first_.back() = false;
      out_ << '\n' << std::string(2 * first_.size(), ' ');
    }
  }
  JsonWriter& raw(const std::string& s) {
    separator();
    pending_key_ = false;
    out_ << s;
    return *this;
  }
  void open(char c) {
    separator();
    pending_key_ = false;
    out_ << c;
    first_.push_back(true);
  }
  void close(char c) {
    const bool empty = first_.back();
    first_.pop_back();
    if (!empty) out_ << '\n' << std::string(2 * first_.size(), ' ');
    out_ << c;
  }

  std::ostringstream out_;
  std::vector<bool> first_;
  bool pending_key_ = false;
};

inline void write_config_echo(JsonWriter& w, const AppConfig& c) {
  w.key("config").begin_object();
  w.field("family", std::string(to_string(c.family)));
  w.key("covariance_init");
  if (c.fit.covariance_init) {
    w.begin_object()
        .field("tau2", c.fit.covariance_init->tau2())
        .field("lambda", c.fit.covariance_init->lambda())
        .end_object();
  } else {
    w.value("auto");
  }
  w.key("stopping").begin_object()
      .field("t0", c.fit.stopping.t0)
      .field("bf_threshold", c.fit.stopping.bf_threshold)
      .field("min_iterations", c.fit.stopping.min_iterations)
      .field("max_iterations", c.fit.stopping.max_iterations)
      .end_object();
  w.key("sampling").begin_object()
      .field("p_mc", c.fit.sampling.p_mc)
      .field("m_min", c.fit.sampling.m_min)
      .field("m_max", c.fit.sampling.m_max);
  w.key("m_fixed");
  if (c.fit.sampling.m_fixed) w.value(*c.fit.sampling.m_fixed); else w.null_value();
  w.field("seed", c.fit.seed).field("ess_floor", c.fit.ess_floor).end_object();
  w.end_object();
}

inline std::string result_json(const FitResult& r, const ModelData& data, const AppConfig& c) {
  JsonWriter w;
  w.begin_object();
  w.field("family", std::string(to_string(c.family)));
  w.field("n", static_cast<long long>(data.n()))
      .field("p", static_cast<long long>(data.p()))
      .field("q", static_cast<long long>(data.q()));
  w.field("converged", r.converged)
      .field("n_iterations", r.n_iterations)
      .field("m_samples", r.m_samples);
  w.field("beta_hat", r.beta_hat).field("se_beta", r.se_beta);
  w.key("wald_ci_beta").begin_array();
  for (const auto& [lo, hi] : r.wald_ci_beta) {
    w.begin_array().value(lo).value(hi).end_array();
  }
  w.end_array();
  w.key("theta_hat").begin_object()
      .field("tau2", r.theta_hat.tau2())
      .field("lambda", r.theta_hat.lambda())
      .field("log_tau2", r.theta_hat.log_tau2)
      .field("log_lambda", r.theta_hat.log_lambda)
      .end_object();
  w.field("theta_information", Matrix(r.theta_information));
  w.field("re_posterior_var_mean", r.re_posterior_var_mean);
  w.field("re_posterior_mean", r.re_posterior_mean);
  w.field("jitter_used", r.jitter_used).field("low_ess_iterations", r.low_ess_iterations);
  w.key("warnings").begin_array();
  for (const auto& s : r.warnings) w.value(s);
  w.end_array();
  w.key("metadata").begin_object()
      .field("gls_sigma_evaluated_at", "posterior_mode")
      .field("wald_z", kWaldZ)
      .end_object();
  write_config_echo(w, c);
  w.end_object();
  return w.str();
}

inline std::string trace_csv(const FitResult& r) {
  std::ostringstream out;
  out << "t,delta_mean,delta_se,p_value,prior_pi0,log_bf,ess,m_used,tau2,lambda";
  const auto p = r.beta_hat.size();
  for (Eigen::Index j = 0; j < p; ++j) out << ",beta" << j + 1;
  out << '\n';
  for (const auto& rec : r.trace) {
    out << rec.t << ',' << fmt(rec.delta_mean) << ',' << fmt(rec.delta_se) << ','
        << fmt(rec.p_value) << ',' << fmt(rec.prior_pi0) << ',' << fmt(rec.log_bf) << ','
        << fmt(rec.ess) << ',' << rec.m_used << ',' << fmt(rec.theta.tau2()) << ','
        << fmt(rec.theta.lambda());
    for (Eigen::Index j = 0; j < rec.beta.size(); ++j) out << ',' << fmt(rec.beta[j]);
    out << '\n';
  }
  return out.str();
}

inline std::string design_name(DesignKind d) {
  return d == DesignKind::PoissonGrid ? "poisson_grid" : "binomial_uniform";
}

inline std::string summary_csv(const ScenarioSpec& spec, const SummaryRow& row) {
  std::ostringstream out;
  out << "# bias CI: mean +/- 1.96 SE over successful replicates (normal theory)\n"
      << "# MRB CI: order-statistic interval for the median (binomial method), after trimming "
         "estimates > 100 or < 1e-6\n"
      << "# coverage: percent of 95% Wald intervals (GLS standard errors) containing the truth\n";
  out << "design,n_obs,trials,beta0,beta1,tau2,lambda,replicates,n_success,n_failed,n_trimmed,"
         "bias_b0,bias_b0_lo,bias_b0_hi,bias_b1,bias_b1_lo,bias_b1_hi,coverage_b0,coverage_b1,"
         "mrb_tau2,mrb_tau2_lo,mrb_tau2_hi,mrb_lambda,mrb_lambda_lo,mrb_lambda_hi,mean_var_u\n";
  auto iv = [&](const Interval& i) { out << ',' << fmt(i.estimate) << ',' << fmt(i.lo) << ',' << fmt(i.hi); };
  out << design_name(spec.design) << ',' << spec.num_observations() << ','
      << (spec.design == DesignKind::BinomialUniform ? spec.trials : 0) << ',' << fmt(spec.beta0)
      << ',' << fmt(spec.beta1) << ',' << fmt(spec.tau2) << ',' << fmt(spec.lambda) << ','
      << spec.replicates << ',' << row.n_success << ',' << row.n_failed << ',' << row.n_trimmed;
  iv(row.bias_b0);
  iv(row.bias_b1);
  out << ',' << fmt(row.coverage_b0) << ',' << fmt(row.coverage_b1);
  iv(row.mrb_tau2);
  iv(row.mrb_lambda);
  out << ',' << fmt(row.mean_var_u) << '\n';
  return out.str();
}

inline std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c == '\n' ? ' ' : c;
  }
  return q + "\"";
}

inline std::string replicates_csv(const std::vector<ReplicateResult>& results) {
  std::ostringstream out;
  out << "index,ok,converged,n_iterations,m_samples,beta0_hat,beta1_hat,se_b0,se_b1,covers_b0,"
         "covers_b1,tau2_hat,lambda_hat,var_u,error\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : results) {
    auto at = [&](const Vector& v, Eigen::Index i) { return v.size() > i ? v[i] : nan; };
    out << r.index << ',' << r.ok << ',' << r.converged << ',' << r.n_iterations << ','
        << r.m_samples << ',' << fmt(at(r.beta_hat, 0)) << ',' << fmt(at(r.beta_hat, 1)) << ','
        << fmt(at(r.se_beta, 0)) << ',' << fmt(at(r.se_beta, 1)) << ',' << r.covers_b0 << ','
        << r.covers_b1 << ',' << fmt(r.tau2_hat) << ',' << fmt(r.lambda_hat) << ','
        << fmt(r.var_u) << ',' << csv_field(r.error) << '\n';
  }
  return out.str();
}

}  // namespace mcml::io
