#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forecaster/series.hpp"

// Sparse precision estimation for a Gaussian Markov random field over the
// locations, and extraction of the dependency graph that sparsifies the
// forecaster's linear layers.
namespace forecaster::gmrf {

struct CovarianceEstimate {
    Vector mean;
    Matrix S;  // sample covariance, 1/(M-1) normalization
    std::size_t sample_count = 0;
};

struct SolverOptions {
    double rho = 1.0;
    double abs_tol = 1e-7;
    double rel_tol = 1e-6;
    int max_iterations = 2000;
    // When false, the L1 term skips the diagonal.
    bool penalize_diagonal = true;
    double variance_floor = 1e-10;
};

struct SolverStats {
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    // Number of covariance diagonal entries raised to the variance floor.
    std::size_t floored_variances = 0;
};

struct PrecisionEstimate {
    Matrix Q;
    double lambda = 0.0;
    SolverStats stats;
};

struct Edge {
    std::size_t i = 0;  // i < j
    std::size_t j = 0;
    double weight = 0.0;  // signed conditional correlation
};

struct DependencyGraph {
    std::size_t n_locations = 0;
    double threshold = 0.1;
    std::vector<Edge> edges;  // sorted by (i, j)

    bool has_edge(std::size_t a, std::size_t b) const;
    std::vector<std::vector<std::size_t>> neighbors() const;
    // Hash of the node count and edge set only; weights and threshold excluded.
    std::uint64_t structure_hash() const;
};

CovarianceEstimate empirical_covariance(const Matrix& samples);  // rows are time samples
CovarianceEstimate empirical_covariance(const SpatialSeries& series);
CovarianceEstimate empirical_covariance(std::span<const SpatialSeries> segments);

// tr(SQ) - log det Q + lambda * ||Q||_1; +inf when Q is not positive definite.
double glasso_objective(const Matrix& S, const Matrix& Q, double lambda, bool penalize_diagonal = true);

// ADMM with a closed-form eigendecomposition prox for the log-det term and
// soft-thresholding for the L1 term. The returned Q is the consensus variable.
PrecisionEstimate graphical_lasso(const CovarianceEstimate& cov, double lambda, const SolverOptions& opts = {});

Matrix conditional_correlation(const Matrix& Q);
Matrix conditional_correlation(const PrecisionEstimate& precision);

DependencyGraph threshold_graph(const Matrix& corr, double threshold);

struct GraphStats {
    double mean_degree = 0.0;
    std::size_t max_degree_node = 0;
    std::size_t max_degree = 0;
    std::vector<std::size_t> degrees;
    std::vector<Edge> top_k_edges;
};

GraphStats graph_stats(const DependencyGraph& graph, std::size_t top_k = 10);

// Mean per-sample Gaussian log-density of `samples` under (mean, Q).
double gaussian_log_likelihood(const Matrix& samples, const Vector& mean, const Matrix& Q);

struct LambdaCandidate {
    double lambda = 0.0;
    bool converged = false;
    double validation_log_likelihood = 0.0;
};

struct LambdaSelection {
    double lambda = 0.0;
    PrecisionEstimate precision;
    CovarianceEstimate covariance;
    std::vector<LambdaCandidate> candidates;  // in evaluation order (descending lambda)
};

// Picks the candidate with the highest held-out log-likelihood; ties go to
// the larger lambda.
LambdaSelection select_lambda(const Matrix& train_samples, std::span<const double> candidate_lambdas,
                              const Matrix& validation_samples, const SolverOptions& opts = {});
LambdaSelection select_lambda(const SpatialSeries& train, std::span<const double> candidate_lambdas,
                              const SpatialSeries& validation, const SolverOptions& opts = {});

struct EdgeRecovery {
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

EdgeRecovery edge_recovery(const DependencyGraph& recovered, const DependencyGraph& truth);

nlohmann::json graph_to_json(const DependencyGraph& graph);
DependencyGraph graph_from_json(const nlohmann::json& doc);
void write_graph(const std::string& path, const DependencyGraph& graph, const std::string& config_hash = {});
DependencyGraph read_graph(const std::string& path, std::string* config_hash = nullptr);

// Dense row-major CSV with a `# n=N` header line; the header may carry a
// trailing ` config_hash=<hex>` token.
void write_matrix_csv(const std::string& path, const Matrix& m, const std::string& config_hash = {});
Matrix read_matrix_csv(const std::string& path, std::string* config_hash = nullptr);

}  // namespace forecaster::gmrf
