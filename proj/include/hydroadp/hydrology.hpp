#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hydroadp/model.hpp"
#include "hydroadp/rng.hpp"

namespace hydroadp::hydrology {

inline constexpr int kWeeksPerYear = 52;

/// Weekly inflow record. NA entries are stored as NaN; negative entries are
/// legal until clean_negatives turns them into NA.
struct InflowDataset {
  Eigen::MatrixXd series;         // rows x sites, hm3/week
  std::vector<int> week_of_year;  // 0..51 per row
  std::vector<int> year;          // per row
  std::vector<std::string> load_warnings;

  int rows() const { return static_cast<int>(series.rows()); }
  int sites() const { return static_cast<int>(series.cols()); }
  bool valid(int r, int c) const { return std::isfinite(series(r, c)); }
  bool row_valid(int r) const;
};

/// Log-normalized series: value = ln(inflow / weekly median), zeros replaced
/// by a per-(week, site) epsilon before the ratio.
struct NormalizedSeries {
  Eigen::MatrixXd values;        // rows x sites; NaN at NA entries
  Eigen::MatrixXd medians;       // 52 x sites
  Eigen::MatrixXd epsilon;       // 52 x sites, zero-replacement values
  std::vector<std::vector<bool>> zero_replaced;  // rows x sites

  bool row_fit_eligible(int r) const;  // all valid, no zero replacement
};

enum class ClusterMethod { kmeans, pca };

const char* to_string(ClusterMethod m);
ClusterMethod cluster_method_from(const std::string& name);

struct HydroMarkovModel {
  int E = 0;
  ClusterMethod method = ClusterMethod::pca;
  Eigen::MatrixXd transition;     // E x E row-stochastic
  std::vector<int> labels;        // per dataset row; -1 = NA
  Eigen::MatrixXd centroids;      // E x sites (kmeans), ordered driest first
  Eigen::VectorXd pca_weights;    // sites, sums to 1 (pca)
  Eigen::VectorXd pca_thresholds; // E-1 increasing split values (pca)
  Eigen::MatrixXd medians;        // 52 x sites, copied from normalization
  Eigen::MatrixXd epsilon;        // 52 x sites

  // pools[week][e]: dataset rows for sampling, built over a circular window
  // around the week (widened until nonempty, up to +-8).
  std::vector<std::vector<std::vector<int>>> pools;
  const std::vector<int>& pool(int week, int e) const;
};

InflowDataset load_inflow_csv(const std::string& path);
InflowDataset clean_negatives(const InflowDataset& ds, int* changed = nullptr);
Eigen::MatrixXd weekly_medians(const InflowDataset& ds);
NormalizedSeries normalize(const InflowDataset& ds,
                           const Eigen::MatrixXd& medians);

struct KmeansResult {
  std::vector<int> labels;    // per point
  Eigen::MatrixXd centroids;  // E x dim
  double objective = 0.0;     // sum of squared distances
  int iterations = 0;
};
KmeansResult kmeans_cluster(const Eigen::MatrixXd& points, int E,
                            std::uint64_t seed);

Eigen::VectorXd pca_direction(const Eigen::MatrixXd& points);
std::vector<int> pca_cluster(const Eigen::MatrixXd& points, int E);

Eigen::MatrixXd estimate_transition_matrix(const std::vector<int>& labels,
                                           int E);

/// Rebuilds the per-(week, cluster) sampling pools from labels and week
/// indices; called by estimation and by model import.
void build_pools(HydroMarkovModel& m, const InflowDataset& ds);

struct EstimationResult {
  HydroMarkovModel markov;
  NormalizedSeries normalized;
  InflowDataset cleaned;
  int negatives_removed = 0;
  int fit_rows = 0;
  std::vector<int> cluster_sizes;
  std::vector<std::string> warnings;
};

EstimationResult estimate_markov_model(const InflowDataset& ds, int E,
                                       ClusterMethod method,
                                       std::uint64_t seed);

/// Draws historical site inflows for (week, cluster) and maps them onto
/// reservoir indices; per-worker Rng handles keep sampling deterministic.
class InflowSampler {
 public:
  InflowSampler(const HydroMarkovModel& model, const InflowDataset& ds,
                std::vector<int> inflow_map, int n_reservoirs);

  model::InflowVector sample(int week, int e, Rng& rng) const;
  Eigen::VectorXd sample_sites(int week, int e, Rng& rng) const;
  int pool_size(int week, int e) const;
  int reservoirs() const { return n_; }

 private:
  const HydroMarkovModel* model_;
  const InflowDataset* ds_;
  std::vector<int> map_;
  int n_;
};

std::string model_to_json(const HydroMarkovModel& m);
HydroMarkovModel model_from_json(const std::string& text,
                                 const InflowDataset& ds);
void save_model(const HydroMarkovModel& m, const std::string& path);
HydroMarkovModel load_model(const std::string& path, const InflowDataset& ds);

}  // namespace hydroadp::hydrology
