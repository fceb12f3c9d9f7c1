#include "forecaster/gmrf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "forecaster/error.hpp"

namespace forecaster::gmrf {

namespace {

double soft_threshold(double x, double kappa) {
    if (x > kappa) return x - kappa;
    if (x < -kappa) return x + kappa;
    return 0.0;
}

Matrix stack_signals(std::span<const SpatialSeries> segments) {
    Eigen::Index rows = 0;
    Eigen::Index cols = -1;
    for (const auto& s : segments) {
        rows += s.signals.rows();
        if (cols >= 0 && s.signals.cols() != cols) {
            fail(ErrorKind::Dimension, "segments disagree on location count");
        }
        cols = s.signals.cols();
    }
    Matrix out(rows, std::max<Eigen::Index>(cols, 0));
    Eigen::Index r = 0;
    for (const auto& s : segments) {
        out.middleRows(r, s.signals.rows()) = s.signals;
        r += s.signals.rows();
    }
    return out;
}

// log det of an SPD matrix, or nullopt-equivalent NaN when Cholesky fails.
double spd_log_det(const Matrix& Q) {
    Eigen::LLT<Matrix> llt(Q);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
    const Matrix& L = llt.matrixLLT();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        const double d = L(i, i);
        if (!(d > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        sum += std::log(d);
    }
    return 2.0 * sum;
}

}  // namespace

bool DependencyGraph::has_edge(std::size_t a, std::size_t b) const {
    if (a == b) return false;
    const auto lo = std::min(a, b);
    const auto hi = std::max(a, b);
    return std::any_of(edges.begin(), edges.end(), [&](const Edge& e) { return e.i == lo && e.j == hi; });
}

std::vector<std::vector<std::size_t>> DependencyGraph::neighbors() const {
    std::vector<std::vector<std::size_t>> adj(n_locations);
    for (const auto& e : edges) {
        adj[e.i].push_back(e.j);
        adj[e.j].push_back(e.i);
    }
    for (auto& row : adj) std::sort(row.begin(), row.end());
    return adj;
}

std::uint64_t DependencyGraph::structure_hash() const {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(edges.size());
    for (const auto& e : edges) pairs.emplace_back(std::min(e.i, e.j), std::max(e.i, e.j));
    std::sort(pairs.begin(), pairs.end());
    std::ostringstream os;
    os << "n=" << n_locations;
    for (const auto& [i, j] : pairs) os << ';' << i << '-' << j;
    return fnv1a64(os.str());
}

CovarianceEstimate empirical_covariance(const Matrix& samples) {
    const Eigen::Index m = samples.rows();
    if (m < 2) {
        fail(ErrorKind::InsufficientData,
             "empirical covariance needs at least 2 samples, got " + std::to_string(m));
    }
    if (!samples.allFinite()) fail(ErrorKind::InsufficientData, "samples contain missing or nonfinite values");
    CovarianceEstimate out;
    out.sample_count = static_cast<std::size_t>(m);
    out.mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - out.mean.transpose();
    out.S = (centered.transpose() * centered) / static_cast<double>(m - 1);
    // exact symmetry regardless of GEMM blocking
    out.S = 0.5 * (out.S + out.S.transpose()).eval();
    return out;
}

CovarianceEstimate empirical_covariance(const SpatialSeries& series) { return empirical_covariance(series.signals); }

CovarianceEstimate empirical_covariance(std::span<const SpatialSeries> segments) {
    return empirical_covariance(stack_signals(segments));
}

double glasso_objective(const Matrix& S, const Matrix& Q, double lambda, bool penalize_diagonal) {
    const double log_det = spd_log_det(Q);
    if (std::isnan(log_det)) return std::numeric_limits<double>::infinity();
    double l1 = Q.cwiseAbs().sum();
    if (!penalize_diagonal) l1 -= Q.diagonal().cwiseAbs().sum();
    return (S.cwiseProduct(Q)).sum() - log_det + lambda * l1;
}

PrecisionEstimate graphical_lasso(const CovarianceEstimate& cov, double lambda, const SolverOptions& opts) {
    const Eigen::Index n = cov.S.rows();
    if (cov.S.cols() != n || n == 0) fail(ErrorKind::Dimension, "covariance must be a nonempty square matrix");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        fail(ErrorKind::Configuration, "lambda must be finite and nonnegative, got " + format_double(lambda));
    }
    if (!(opts.rho > 0.0)) fail(ErrorKind::Configuration, "ADMM penalty rho must be positive");

    Matrix S = cov.S;
    PrecisionEstimate out;
    out.lambda = lambda;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (S(i, i) < opts.variance_floor) {
            S(i, i) = opts.variance_floor;
            ++out.stats.floored_variances;
        }
    }

    if (lambda == 0.0) {
        // Unpenalized MLE: the minimizer is S^-1, defined only for nonsingular S.
        Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
        const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (eig.eigenvalues().minCoeff() <= 1e-12 * std::max(max_ev, 1.0)) {
            fail(ErrorKind::InsufficientData, "lambda = 0 requires a nonsingular covariance");
        }
        const Vector inv = eig.eigenvalues().cwiseInverse();
        out.Q = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
        out.Q = 0.5 * (out.Q + out.Q.transpose()).eval();
        return out;
    }

    const double rho = opts.rho;
    const double kappa = lambda / rho;
    Matrix Z = Matrix::Zero(n, n);
    Matrix U = Matrix::Zero(n, n);
    Matrix X(n, n);
    Matrix Z_prev(n, n);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(n);
    const double scale = static_cast<double>(n);  // sqrt(n*n) entries

    for (int it = 1; it <= opts.max_iterations; ++it) {
        // X-update: argmin tr(SX) - log det X + rho/2 ||X - Z + U||^2
        const Matrix target = rho * (Z - U) - S;
        eig.compute(0.5 * (target + target.transpose()));
        const Vector& d = eig.eigenvalues();
        Vector x(n);
        for (Eigen::Index i = 0; i < n; ++i) x(i) = (d(i) + std::sqrt(d(i) * d(i) + 4.0 * rho)) / (2.0 * rho);
        X.noalias() = eig.eigenvectors() * x.asDiagonal() * eig.eigenvectors().transpose();
        X = 0.5 * (X + X.transpose()).eval();

        Z_prev = Z;
        const Matrix V = X + U;
        for (Eigen::Index j = 0; j < n; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) {
                Z(i, j) = (i == j && !opts.penalize_diagonal) ? V(i, j) : soft_threshold(V(i, j), kappa);
            }
        }
        U += X - Z;

        const double r_norm = (X - Z).norm();
        const double s_norm = rho * (Z - Z_prev).norm();
        const double eps_pri = scale * opts.abs_tol + opts.rel_tol * std::max(X.norm(), Z.norm());
        const double eps_dual = scale * opts.abs_tol + opts.rel_tol * rho * U.norm();
        out.stats.iterations = it;
        out.stats.primal_residual = r_norm;
        out.stats.dual_residual = s_norm;
        if (r_norm <= eps_pri && s_norm <= eps_dual) {
            Eigen::LLT<Matrix> llt(Z);
            if (llt.info() == Eigen::Success) {
                out.Q = Z;
                return out;
            }
        }
    }
    fail(ErrorKind::Convergence, "graphical lasso did not converge in " + std::to_string(opts.max_iterations) +
                                     " iterations (lambda " + format_double(lambda) + ", primal residual " +
                                     format_double(out.stats.primal_residual) + ", dual residual " +
                                     format_double(out.stats.dual_residual) + ")");
}

Matrix conditional_correlation(const Matrix& Q) {
    const Eigen::Index n = Q.rows();
    if (Q.cols() != n) fail(ErrorKind::Dimension, "precision matrix must be square");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(Q(i, i) > 0.0)) {
            fail(ErrorKind::InvalidPrecision, "precision diagonal entry " + std::to_string(i) + " is not positive");
        }
    }
    Matrix corr(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) {
                corr(i, j) = 1.0;
            } else {
                corr(i, j) = std::clamp(-Q(i, j) / std::sqrt(Q(i, i) * Q(j, j)), -1.0, 1.0);
            }
        }
    }
    return corr;
}

Matrix conditional_correlation(const PrecisionEstimate& precision) { return conditional_correlation(precision.Q); }

DependencyGraph threshold_graph(const Matrix& corr, double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        fail(ErrorKind::Configuration, "threshold must lie in (0, 1], got " + format_double(threshold));
    }
    const Eigen::Index n = corr.rows();
    if (corr.cols() != n) fail(ErrorKind::Dimension, "correlation matrix must be square");
    DependencyGraph g;
    g.n_locations = static_cast<std::size_t>(n);
    g.threshold = threshold;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (std::abs(corr(i, j) - corr(j, i)) > 1e-12) {
                fail(ErrorKind::Configuration, "correlation matrix is not symmetric");
            }
            if (std::abs(corr(i, j)) >= threshold) {
                g.edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), corr(i, j)});
            }
        }
    }
    return g;
}

GraphStats graph_stats(const DependencyGraph& graph, std::size_t top_k) {
    GraphStats st;
    st.degrees.assign(graph.n_locations, 0);
    for (const auto& e : graph.edges) {
        ++st.degrees[e.i];
        ++st.degrees[e.j];
    }
    if (graph.n_locations > 0) {
        st.mean_degree = 2.0 * static_cast<double>(graph.edges.size()) / static_cast<double>(graph.n_locations);
        const auto it = std::max_element(st.degrees.begin(), st.degrees.end());
        st.max_degree_node = static_cast<std::size_t>(it - st.degrees.begin());
        st.max_degree = *it;
    }
    st.top_k_edges = graph.edges;
    std::sort(st.top_k_edges.begin(), st.top_k_edges.end(), [](const Edge& a, const Edge& b) {
        const double wa = std::abs(a.weight);
        const double wb = std::abs(b.weight);
        if (wa != wb) return wa > wb;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });
    if (st.top_k_edges.size() > top_k) st.top_k_edges.resize(top_k);
    return st;
}

double gaussian_log_likelihood(const Matrix& samples, const Vector& mean, const Matrix& Q) {
    const double log_det = spd_log_det(Q);
    if (std::isnan(log_det)) fail(ErrorKind::InvalidPrecision, "precision matrix is not positive definite");
    const Eigen::Index m = samples.rows();
    if (m == 0) fail(ErrorKind::InsufficientData, "log-likelihood of an empty sample");
    const Matrix centered = samples.rowwise() - mean.transpose();
    const double quad = (centered * Q).cwiseProduct(centered).sum() / static_cast<double>(m);
    const double n = static_cast<double>(Q.rows());
    return 0.5 * log_det - 0.5 * quad - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

LambdaSelection select_lambda(const Matrix& train_samples, std::span<const double> candidate_lambdas,
                              const Matrix& validation_samples, const SolverOptions& opts) {
    if (candidate_lambdas.empty()) fail(ErrorKind::Configuration, "lambda candidate list is empty");
    std::vector<double> order(candidate_lambdas.begin(), candidate_lambdas.end());
    std::sort(order.begin(), order.end(), std::greater<>());

    LambdaSelection sel;
    sel.covariance = empirical_covariance(train_samples);
    bool found = false;
    double best = -std::numeric_limits<double>::infinity();
    std::string failures;
    for (double lambda : order) {
        LambdaCandidate cand;
        cand.lambda = lambda;
        try {
            PrecisionEstimate est = graphical_lasso(sel.covariance, lambda, opts);
            cand.converged = true;
            cand.validation_log_likelihood = gaussian_log_likelihood(validation_samples, sel.covariance.mean, est.Q);
            // strict comparison under descending order keeps the larger lambda on ties
            if (!found || cand.validation_log_likelihood > best) {
                best = cand.validation_log_likelihood;
                sel.lambda = lambda;
                sel.precision = std::move(est);
                found = true;
            }
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Convergence && e.kind() != ErrorKind::InsufficientData) throw;
            failures += std::string(failures.empty() ? "" : "; ") + e.what();
        }
        sel.candidates.push_back(cand);
    }
    if (!found) fail(ErrorKind::Convergence, "no lambda candidate converged: " + failures);
    return sel;
}

LambdaSelection select_lambda(const SpatialSeries& train, std::span<const double> candidate_lambdas,
                              const SpatialSeries& validation, const SolverOptions& opts) {
    return select_lambda(train.signals, candidate_lambdas, validation.signals, opts);
}

EdgeRecovery edge_recovery(const DependencyGraph& recovered, const DependencyGraph& truth) {
    EdgeRecovery r;
    for (const auto& e : recovered.edges) {
        if (truth.has_edge(e.i, e.j)) {
            ++r.true_positives;
        } else {
            ++r.false_positives;
        }
    }
    r.false_negatives = truth.edges.size() - r.true_positives;
    const double tp = static_cast<double>(r.true_positives);
    r.precision = recovered.edges.empty() ? (truth.edges.empty() ? 1.0 : 0.0)
                                          : tp / static_cast<double>(recovered.edges.size());
    r.recall = truth.edges.empty() ? 1.0 : tp / static_cast<double>(truth.edges.size());
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

nlohmann::json graph_to_json(const DependencyGraph& graph) {
    nlohmann::json doc;
    doc["n_locations"] = graph.n_locations;
    doc["threshold"] = graph.threshold;
    auto edges = nlohmann::json::array();
    for (const auto& e : graph.edges) {
        edges.push_back({{"i", std::min(e.i, e.j)}, {"j", std::max(e.i, e.j)}, {"weight", e.weight}});
    }
    doc["edges"] = std::move(edges);
    return doc;
}

DependencyGraph graph_from_json(const nlohmann::json& doc) {
    DependencyGraph g;
    try {
        g.n_locations = doc.at("n_locations").get<std::size_t>();
        g.threshold = doc.value("threshold", 0.1);
        for (const auto& e : doc.at("edges")) {
            Edge edge{e.at("i").get<std::size_t>(), e.at("j").get<std::size_t>(), e.value("weight", 1.0)};
            if (edge.i == edge.j) fail(ErrorKind::Parse, "graph contains a self-loop at node " + std::to_string(edge.i));
            if (edge.i > edge.j) std::swap(edge.i, edge.j);
            if (edge.j >= g.n_locations) fail(ErrorKind::Parse, "graph edge index out of range");
            g.edges.push_back(edge);
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, std::string("malformed graph document: ") + e.what());
    }
    std::sort(g.edges.begin(), g.edges.end(),
              [](const Edge& a, const Edge& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    for (std::size_t k = 1; k < g.edges.size(); ++k) {
        if (g.edges[k].i == g.edges[k - 1].i && g.edges[k].j == g.edges[k - 1].j) {
            fail(ErrorKind::Parse, "graph contains a duplicate edge");
        }
    }
    return g;
}

void write_graph(const std::string& path, const DependencyGraph& graph, const std::string& config_hash) {
    nlohmann::json doc = graph_to_json(graph);
    if (!config_hash.empty()) doc["config_hash"] = config_hash;
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << doc.dump(2) << '\n';
}

DependencyGraph read_graph(const std::string& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing graph file " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, path + ": " + e.what());
    }
    if (config_hash) *config_hash = doc.value("config_hash", std::string{});
    return graph_from_json(doc);
}

void write_matrix_csv(const std::string& path, const Matrix& m, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << "# n=" << m.rows();
    if (!config_hash.empty()) out << " config_hash=" << config_hash;
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

Matrix read_matrix_csv(const std::string& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing matrix file " + path);
    std::string line;
    std::getline(in, line);
    std::istringstream header(line);
    std::string hash_token, n_token, tag;
    header >> tag >> n_token >> hash_token;
    if (tag != "#" || n_token.rfind("n=", 0) != 0) fail(ErrorKind::Parse, path + ": expected '# n=N' header");
    std::size_t n = 0;
    try {
        n = std::stoul(n_token.substr(2));
    } catch (const std::exception&) {
        fail(ErrorKind::Parse, path + ": bad matrix size in header");
    }
    if (config_hash) {
        *config_hash = hash_token.rfind("config_hash=", 0) == 0 ? hash_token.substr(12) : std::string{};
    }
    Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) fail(ErrorKind::Parse, path + ": truncated at row " + std::to_string(i));
        std::istringstream row(line);
        std::string cell;
        for (std::size_t j = 0; j < n; ++j) {
            if (!std::getline(row, cell, ',')) {
                fail(ErrorKind::Parse, path + ": row " + std::to_string(i) + " has too few columns");
            }
            try {
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::stod(cell);
            } catch (const std::exception&) {
                fail(ErrorKind::Parse, path + ": bad value at row " + std::to_string(i) + ", column " +
                                           std::to_string(j));
            }
        }
    }
    return m;
}

}  // namespace forecaster::gmrf
