#include "hydroadp/hydrology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "hydroadp/errors.hpp"
#include "json.hpp"

namespace hydroadp::hydrology {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

bool InflowDataset::row_valid(int r) const {
  for (int c = 0; c < sites(); ++c)
    if (!valid(r, c)) return false;
  return true;
}

bool NormalizedSeries::row_fit_eligible(int r) const {
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    if (!std::isfinite(values(r, c))) return false;
    if (zero_replaced[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)])
      return false;
  }
  return true;
}

const char* to_string(ClusterMethod m) {
  return m == ClusterMethod::kmeans ? "kmeans" : "pca";
}

ClusterMethod cluster_method_from(const std::string& name) {
  if (name == "kmeans") return ClusterMethod::kmeans;
  if (name == "pca") return ClusterMethod::pca;
  throw ConfigError("unknown cluster method '" + name + "' (kmeans|pca)");
}

const std::vector<int>& HydroMarkovModel::pool(int week, int e) const {
  if (e < 0 || e >= E) throw ConfigError("pool: cluster index out of range");
  if (pools.empty()) throw ConfigError("pool: pools not built");
  const int w = ((week % kWeeksPerYear) + kWeeksPerYear) % kWeeksPerYear;
  return pools[static_cast<std::size_t>(w)][static_cast<std::size_t>(e)];
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

InflowDataset load_inflow_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read inflow CSV: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("inflow CSV empty: " + path);
  auto header = split_csv(line);
  if (header.size() < 3 || trim(header[0]) != "year" || trim(header[1]) != "week")
    throw DataError("inflow CSV header must be year,week,<site columns>: " + path);
  const int p = static_cast<int>(header.size()) - 2;

  std::vector<std::array<int, 2>> index;
  std::vector<std::vector<double>> data;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (static_cast<int>(cells.size()) != p + 2)
      throw DataError("inflow CSV line " + std::to_string(lineno) +
                      ": expected " + std::to_string(p + 2) + " cells");
    std::array<int, 2> yw{};
    try {
      yw[0] = std::stoi(trim(cells[0]));
      yw[1] = std::stoi(trim(cells[1]));
    } catch (const std::exception&) {
      throw DataError("inflow CSV line " + std::to_string(lineno) +
                      ": year/week not integer");
    }
    if (yw[1] < 0 || yw[1] >= kWeeksPerYear)
      throw DataError("inflow CSV line " + std::to_string(lineno) +
                      ": week must be in 0..51");
    std::vector<double> row(p, kNaN);
    for (int c = 0; c < p; ++c) {
      const std::string cell = trim(cells[c + 2]);
      if (cell.empty()) continue;
      try {
        std::size_t used = 0;
        row[c] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw DataError("inflow CSV line " + std::to_string(lineno) +
                        ": bad numeric cell '" + cell + "'");
      }
    }
    index.push_back(yw);
    data.push_back(std::move(row));
  }
  if (data.empty()) throw DataError("inflow CSV has no data rows: " + path);

  InflowDataset ds;
  ds.series.resize(static_cast<Eigen::Index>(data.size()), p);
  ds.week_of_year.resize(data.size());
  ds.year.resize(data.size());
  int gaps = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    ds.year[r] = index[r][0];
    ds.week_of_year[r] = index[r][1];
    for (int c = 0; c < p; ++c) ds.series(static_cast<Eigen::Index>(r), c) = data[r][c];
    if (r > 0) {
      const int expect = (index[r - 1][1] + 1) % kWeeksPerYear;
      if (index[r][1] != expect) ++gaps;
    }
  }
  if (gaps > 0)
    ds.load_warnings.push_back("inflow CSV: " + std::to_string(gaps) +
                               " non-contiguous week step(s); transition "
                               "estimation treats consecutive rows as "
                               "consecutive weeks");
  return ds;
}

InflowDataset clean_negatives(const InflowDataset& ds, int* changed) {
  InflowDataset out = ds;
  int count = 0;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.sites(); ++c)
      if (out.valid(r, c) && out.series(r, c) < 0.0) {
        out.series(r, c) = kNaN;
        ++count;
      }
  if (changed) *changed = count;
  return out;
}

MatrixXd weekly_medians(const InflowDataset& ds) {
  const int p = ds.sites();
  MatrixXd med(kWeeksPerYear, p);
  std::vector<double> vals;
  for (int w = 0; w < kWeeksPerYear; ++w) {
    for (int c = 0; c < p; ++c) {
      vals.clear();
      for (int r = 0; r < ds.rows(); ++r)
        if (ds.week_of_year[r] == w && ds.valid(r, c))
          vals.push_back(ds.series(r, c));
      if (vals.empty())
        throw DataError("weekly_medians: no valid data at week " +
                        std::to_string(w) + ", site " + std::to_string(c));
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      const double m = (n % 2 == 1) ? vals[n / 2]
                                    : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
      if (!(m > 0.0))
        throw DataError("weekly_medians: nonpositive median at week " +
                        std::to_string(w) + ", site " + std::to_string(c));
      med(w, c) = m;
    }
  }
  return med;
}

NormalizedSeries normalize(const InflowDataset& ds, const MatrixXd& medians) {
  if (medians.rows() != kWeeksPerYear || medians.cols() != ds.sites())
    throw ConfigError("normalize: median table shape mismatch");
  const int p = ds.sites();

  // Scale-aware zero replacement: one percent of the smallest positive valid
  // inflow observed at that (week, site).
  MatrixXd eps(kWeeksPerYear, p);
  eps.setZero();
  for (int w = 0; w < kWeeksPerYear; ++w)
    for (int c = 0; c < p; ++c) {
      double minpos = std::numeric_limits<double>::infinity();
      for (int r = 0; r < ds.rows(); ++r)
        if (ds.week_of_year[r] == w && ds.valid(r, c) && ds.series(r, c) > 0.0)
          minpos = std::min(minpos, ds.series(r, c));
      eps(w, c) = std::isfinite(minpos) ? 0.01 * minpos : 0.01 * medians(w, c);
    }

  NormalizedSeries out;
  out.medians = medians;
  out.epsilon = eps;
  out.values.resize(ds.rows(), p);
  out.zero_replaced.assign(static_cast<std::size_t>(ds.rows()),
                           std::vector<bool>(static_cast<std::size_t>(p), false));
  for (int r = 0; r < ds.rows(); ++r) {
    const int w = ds.week_of_year[r];
    for (int c = 0; c < p; ++c) {
      if (!ds.valid(r, c)) {
        out.values(r, c) = kNaN;
        continue;
      }
      double v = ds.series(r, c);
      if (v < 0.0)
        throw DataError("normalize: negative entry present, clean first");
      if (v == 0.0) {
        v = eps(w, c);
        out.zero_replaced[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = true;
      }
      out.values(r, c) = std::log(v / medians(w, c));
    }
  }
  return out;
}

namespace {

int nearest_row(const MatrixXd& centroids, const VectorXd& x) {
  int best = 0;
  double bestd = std::numeric_limits<double>::infinity();
  for (int e = 0; e < centroids.rows(); ++e) {
    const double d = (centroids.row(e).transpose() - x).squaredNorm();
    if (d < bestd) {
      bestd = d;
      best = e;
    }
  }
  return best;
}

// Reorders clusters so label 0 is the driest (smallest centroid coordinate
// sum), matching the ordering the quantile method gets by construction.
void order_clusters(KmeansResult& km) {
  const int E = static_cast<int>(km.centroids.rows());
  std::vector<int> order(E);
  for (int e = 0; e < E; ++e) order[e] = e;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return km.centroids.row(a).sum() < km.centroids.row(b).sum();
  });
  std::vector<int> inverse(E);
  for (int pos = 0; pos < E; ++pos) inverse[order[pos]] = pos;
  MatrixXd reordered(E, km.centroids.cols());
  for (int pos = 0; pos < E; ++pos) reordered.row(pos) = km.centroids.row(order[pos]);
  km.centroids = reordered;
  for (auto& l : km.labels) l = inverse[l];
}

}  // namespace

KmeansResult kmeans_cluster(const MatrixXd& points, int E, std::uint64_t seed) {
  const int R = static_cast<int>(points.rows());
  if (E < 1) throw ConfigError("kmeans_cluster: E must be >= 1");
  {
    std::set<std::vector<double>> distinct;
    for (int r = 0; r < R && static_cast<int>(distinct.size()) < E; ++r) {
      std::vector<double> key(points.cols());
      for (Eigen::Index c = 0; c < points.cols(); ++c) key[c] = points(r, c);
      distinct.insert(std::move(key));
    }
    if (static_cast<int>(distinct.size()) < E)
      throw DataError("kmeans_cluster: fewer distinct points than clusters");
  }

  Rng rng(derive_seed(seed, 0xC1A5));
  MatrixXd centroids(E, points.cols());
  // k-means++ seeding: spread initial centroids by squared-distance weighting.
  centroids.row(0) = points.row(static_cast<int>(rng.below(static_cast<std::uint64_t>(R))));
  VectorXd d2 = VectorXd::Constant(R, std::numeric_limits<double>::infinity());
  for (int e = 1; e < E; ++e) {
    for (int r = 0; r < R; ++r)
      d2[r] = std::min(d2[r], (points.row(r) - centroids.row(e - 1)).squaredNorm());
    const double total = d2.sum();
    int pick = -1;
    if (total > 0.0) {
      std::vector<double> probs(R);
      for (int r = 0; r < R; ++r) probs[r] = d2[r] / total;
      pick = static_cast<int>(rng.categorical(probs));
    }
    if (pick < 0 || d2[pick] == 0.0) {
      for (int r = 0; r < R; ++r)
        if (d2[r] > 0.0) {
          pick = r;
          break;
        }
    }
    centroids.row(e) = points.row(pick);
  }

  KmeansResult km;
  km.labels.assign(R, 0);
  std::vector<int> counts(E, 0);
  for (int iter = 0; iter < 200; ++iter) {
    km.iterations = iter + 1;
    bool changed = false;
    for (int r = 0; r < R; ++r) {
      const int l = nearest_row(centroids, points.row(r).transpose());
      if (l != km.labels[r]) {
        km.labels[r] = l;
        changed = true;
      }
    }
    std::fill(counts.begin(), counts.end(), 0);
    for (int l : km.labels) ++counts[l];
    for (int e = 0; e < E; ++e) {
      if (counts[e] > 0) continue;
      // Reseed an empty cluster at the point farthest from its centroid.
      int far = 0;
      double fard = -1.0;
      for (int r = 0; r < R; ++r) {
        if (counts[km.labels[r]] <= 1) continue;
        const double d = (points.row(r) - centroids.row(km.labels[r])).squaredNorm();
        if (d > fard) {
          fard = d;
          far = r;
        }
      }
      --counts[km.labels[far]];
      km.labels[far] = e;
      counts[e] = 1;
      changed = true;
    }
    centroids.setZero();
    for (int r = 0; r < R; ++r) centroids.row(km.labels[r]) += points.row(r);
    for (int e = 0; e < E; ++e) centroids.row(e) /= static_cast<double>(counts[e]);
    if (!changed) break;
  }

  km.centroids = centroids;
  km.objective = 0.0;
  for (int r = 0; r < R; ++r)
    km.objective += (points.row(r) - centroids.row(km.labels[r])).squaredNorm();
  order_clusters(km);
  return km;
}

VectorXd pca_direction(const MatrixXd& points) {
  const int R = static_cast<int>(points.rows());
  if (R < 2) throw DataError("pca_direction: need at least 2 points");
  Eigen::RowVectorXd mean = points.colwise().mean();
  MatrixXd centered = points.rowwise() - mean;
  MatrixXd cov = centered.transpose() * centered / static_cast<double>(R - 1);
  if (cov.cwiseAbs().maxCoeff() == 0.0)
    throw DataError("pca_direction: zero covariance");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  VectorXd lead = es.eigenvectors().col(points.cols() - 1);
  if (lead.sum() < 0.0) lead = -lead;
  const double s = lead.sum();
  if (std::abs(s) < 1e-12)
    throw DataError("pca_direction: leading direction has zero component sum");
  return lead / s;
}

namespace {

// Equal-count buckets over the sorted projections; boundaries at b*R/E keep
// sizes within one of each other. Ties resolve by row order (stable).
std::vector<int> split_by_projection(const VectorXd& proj, int E,
                                     VectorXd* thresholds) {
  const int R = static_cast<int>(proj.size());
  std::vector<int> order(R);
  for (int i = 0; i < R; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return proj[a] < proj[b]; });
  std::vector<int> labels(R, 0);
  for (int b = 0; b < E; ++b) {
    const int lo = static_cast<int>(static_cast<long long>(b) * R / E);
    const int hi = static_cast<int>(static_cast<long long>(b + 1) * R / E);
    for (int i = lo; i < hi; ++i) labels[order[i]] = b;
  }
  if (thresholds) {
    thresholds->resize(E - 1);
    for (int b = 0; b + 1 < E; ++b) {
      const int hi = static_cast<int>(static_cast<long long>(b + 1) * R / E);
      (*thresholds)[b] = proj[order[std::min(hi, R - 1)]];
    }
  }
  return labels;
}

}  // namespace

std::vector<int> pca_cluster(const MatrixXd& points, int E) {
  if (E < 1) throw ConfigError("pca_cluster: E must be >= 1");
  if (E == 1) return std::vector<int>(points.rows(), 0);
  const VectorXd w = pca_direction(points);
  const VectorXd proj = points * w;
  return split_by_projection(proj, E, nullptr);
}

MatrixXd estimate_transition_matrix(const std::vector<int>& labels, int E) {
  if (E < 1) throw ConfigError("estimate_transition_matrix: E must be >= 1");
  MatrixXd counts = MatrixXd::Zero(E, E);
  for (std::size_t t = 0; t + 1 < labels.size(); ++t) {
    const int a = labels[t];
    const int b = labels[t + 1];
    if (a < 0 || b < 0) continue;  // pairs straddling NA are skipped
    if (a >= E || b >= E)
      throw DataError("estimate_transition_matrix: label out of range");
    counts(a, b) += 1.0;
  }
  MatrixXd trans(E, E);
  for (int i = 0; i < E; ++i) {
    const double departures = counts.row(i).sum();
    if (departures == 0.0)
      throw DataError("estimate_transition_matrix: state " + std::to_string(i) +
                      " has no observed departures");
    trans.row(i) = counts.row(i) / departures;
  }
  return trans;
}

void build_pools(HydroMarkovModel& m, const InflowDataset& ds) {
  if (static_cast<int>(m.labels.size()) != ds.rows())
    throw ConfigError("build_pools: label count does not match dataset");
  m.pools.assign(kWeeksPerYear,
                 std::vector<std::vector<int>>(static_cast<std::size_t>(m.E)));
  auto circ_dist = [](int a, int b) {
    const int d = std::abs(a - b);
    return std::min(d, kWeeksPerYear - d);
  };
  for (int w = 0; w < kWeeksPerYear; ++w) {
    for (int e = 0; e < m.E; ++e) {
      auto& pool = m.pools[w][e];
      for (int width : {2, 4, 8}) {
        pool.clear();
        for (int r = 0; r < ds.rows(); ++r)
          if (m.labels[r] == e && circ_dist(ds.week_of_year[r], w) <= width)
            pool.push_back(r);
        if (!pool.empty()) break;
      }
    }
  }
}

EstimationResult estimate_markov_model(const InflowDataset& ds, int E,
                                       ClusterMethod method,
                                       std::uint64_t seed) {
  if (E < 1) throw ConfigError("estimate_markov_model: E must be >= 1");
  EstimationResult res;
  res.cleaned = clean_negatives(ds, &res.negatives_removed);
  res.warnings = ds.load_warnings;
  const MatrixXd medians = weekly_medians(res.cleaned);
  res.normalized = normalize(res.cleaned, medians);

  std::vector<int> fit_rows;
  std::vector<int> residual_rows;  // valid everywhere but zero-replaced
  for (int r = 0; r < res.cleaned.rows(); ++r) {
    if (res.normalized.row_fit_eligible(r)) {
      fit_rows.push_back(r);
    } else if (res.cleaned.row_valid(r)) {
      residual_rows.push_back(r);
    }
  }
  res.fit_rows = static_cast<int>(fit_rows.size());
  if (res.fit_rows < E)
    throw DataError("estimate_markov_model: only " +
                    std::to_string(res.fit_rows) +
                    " fit-eligible rows for E=" + std::to_string(E));

  MatrixXd points(res.fit_rows, res.cleaned.sites());
  for (int i = 0; i < res.fit_rows; ++i)
    points.row(i) = res.normalized.values.row(fit_rows[i]);

  HydroMarkovModel& m = res.markov;
  m.E = E;
  m.method = method;
  m.medians = medians;
  m.epsilon = res.normalized.epsilon;
  m.labels.assign(res.cleaned.rows(), -1);

  if (method == ClusterMethod::kmeans) {
    KmeansResult km = kmeans_cluster(points, E, seed);
    m.centroids = km.centroids;
    for (int i = 0; i < res.fit_rows; ++i) m.labels[fit_rows[i]] = km.labels[i];
    for (int r : residual_rows)
      m.labels[r] = nearest_row(m.centroids,
                                res.normalized.values.row(r).transpose());
  } else {
    m.pca_weights = pca_direction(points);
    const VectorXd proj = points * m.pca_weights;
    std::vector<int> labels;
    if (E == 1) {
      labels.assign(res.fit_rows, 0);
      m.pca_thresholds.resize(0);
    } else {
      labels = split_by_projection(proj, E, &m.pca_thresholds);
    }
    for (int i = 0; i < res.fit_rows; ++i) m.labels[fit_rows[i]] = labels[i];
    for (int r : residual_rows) {
      const double pr = res.normalized.values.row(r) * m.pca_weights;
      int lab = 0;
      for (int b = 0; b < static_cast<int>(m.pca_thresholds.size()); ++b)
        if (m.pca_thresholds[b] <= pr) lab = b + 1;
      m.labels[r] = lab;
    }
  }

  res.cluster_sizes.assign(E, 0);
  for (int i = 0; i < res.fit_rows; ++i) ++res.cluster_sizes[m.labels[fit_rows[i]]];

  m.transition = estimate_transition_matrix(m.labels, E);
  build_pools(m, res.cleaned);
  for (int w = 0; w < kWeeksPerYear; ++w)
    for (int e = 0; e < E; ++e)
      if (m.pools[w][e].empty())
        res.warnings.push_back("empty sampling pool at week " +
                               std::to_string(w) + ", cluster " +
                               std::to_string(e));
  return res;
}

InflowSampler::InflowSampler(const HydroMarkovModel& model,
                             const InflowDataset& ds,
                             std::vector<int> inflow_map, int n_reservoirs)
    : model_(&model), ds_(&ds), map_(std::move(inflow_map)), n_(n_reservoirs) {
  if (static_cast<int>(map_.size()) != ds.sites())
    throw ConfigError("InflowSampler: inflow_map size must equal site count");
  for (int idx : map_)
    if (idx < 0 || idx >= n_)
      throw ConfigError("InflowSampler: inflow_map index out of range");
}

VectorXd InflowSampler::sample_sites(int week, int e, Rng& rng) const {
  const auto& pool = model_->pool(week, e);
  if (pool.empty())
    throw DataError("sample_inflow: empty pool at week " +
                    std::to_string(week % kWeeksPerYear) + ", cluster " +
                    std::to_string(e));
  const int row = pool[static_cast<std::size_t>(
      rng.below(static_cast<std::uint64_t>(pool.size())))];
  return ds_->series.row(row).transpose();
}

model::InflowVector InflowSampler::sample(int week, int e, Rng& rng) const {
  const VectorXd sites = sample_sites(week, e, rng);
  VectorXd w = VectorXd::Zero(n_);
  for (std::size_t j = 0; j < map_.size(); ++j)
    w[map_[j]] = sites[static_cast<Eigen::Index>(j)];
  return model::InflowVector{std::move(w)};
}

int InflowSampler::pool_size(int week, int e) const {
  return static_cast<int>(model_->pool(week, e).size());
}

namespace {

nlohmann::json dense_to_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd dense_from_json(const nlohmann::json& j) {
  if (j.empty()) return MatrixXd(0, 0);
  MatrixXd m(j.size(), j.at(0).size());
  for (std::size_t i = 0; i < j.size(); ++i)
    for (std::size_t c = 0; c < j.at(i).size(); ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
          j.at(i).at(c).get<double>();
  return m;
}

}  // namespace

std::string model_to_json(const HydroMarkovModel& m) {
  nlohmann::json j;
  j["format"] = "hydroadp-markov-v1";
  j["E"] = m.E;
  j["method"] = to_string(m.method);
  j["transition"] = dense_to_json(m.transition);
  j["labels"] = m.labels;
  if (m.centroids.size() > 0) j["centroids"] = dense_to_json(m.centroids);
  if (m.pca_weights.size() > 0) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.pca_weights.size(); ++i)
      w.push_back(m.pca_weights[i]);
    j["pca_weights"] = std::move(w);
    nlohmann::json t = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.pca_thresholds.size(); ++i)
      t.push_back(m.pca_thresholds[i]);
    j["pca_thresholds"] = std::move(t);
  }
  j["medians"] = dense_to_json(m.medians);
  j["epsilon"] = dense_to_json(m.epsilon);
  return j.dump(2);
}

HydroMarkovModel model_from_json(const std::string& text,
                                 const InflowDataset& ds) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("markov model: invalid JSON: ") + e.what());
  }
  if (j.value("format", std::string()) != "hydroadp-markov-v1")
    throw DataError("markov model: unrecognized format tag");
  HydroMarkovModel m;
  m.E = j.at("E").get<int>();
  m.method = cluster_method_from(j.at("method").get<std::string>());
  m.transition = dense_from_json(j.at("transition"));
  if (m.transition.rows() != m.E || m.transition.cols() != m.E)
    throw DataError("markov model: transition matrix shape mismatch");
  for (int i = 0; i < m.E; ++i) {
    if (m.transition.row(i).minCoeff() < 0.0 ||
        std::abs(m.transition.row(i).sum() - 1.0) > 1e-9)
      throw DataError("markov model: transition row " + std::to_string(i) +
                      " is not a probability distribution");
  }
  m.labels = j.at("labels").get<std::vector<int>>();
  for (int l : m.labels)
    if (l < -1 || l >= m.E) throw DataError("markov model: label out of range");
  if (j.contains("centroids")) m.centroids = dense_from_json(j.at("centroids"));
  if (j.contains("pca_weights")) {
    const auto& w = j.at("pca_weights");
    m.pca_weights.resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      m.pca_weights[static_cast<Eigen::Index>(i)] = w.at(i).get<double>();
    const auto& t = j.at("pca_thresholds");
    m.pca_thresholds.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      m.pca_thresholds[static_cast<Eigen::Index>(i)] = t.at(i).get<double>();
  }
  m.medians = dense_from_json(j.at("medians"));
  m.epsilon = dense_from_json(j.at("epsilon"));
  build_pools(m, ds);
  return m;
}

void save_model(const HydroMarkovModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write markov model: " + path);
  out << model_to_json(m) << "\n";
}

HydroMarkovModel load_model(const std::string& path, const InflowDataset& ds) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read markov model: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str(), ds);
}

}  // namespace hydroadp::hydrology
