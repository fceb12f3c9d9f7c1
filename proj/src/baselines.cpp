#include "forecaster/baselines.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "forecaster/error.hpp"

namespace forecaster::baselines {

namespace {

constexpr double kSingularEigen = 1e-10;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::vector<std::size_t> resolve_columns(std::span<const std::size_t> requested, std::size_t n_aux) {
    std::vector<std::size_t> cols(requested.begin(), requested.end());
    if (cols.empty()) {
        cols.resize(n_aux);
        std::iota(cols.begin(), cols.end(), std::size_t{0});
    }
    for (std::size_t c : cols) {
        if (c >= n_aux) fail(ErrorKind::Configuration, "VAR aux column " + std::to_string(c) + " out of range");
    }
    return cols;
}

void write_block(std::ostream& out, const std::string& name, const Matrix& m) {
    out << '[' << name << "]\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m(r, c));
        out << '\n';
    }
}

}  // namespace

Vector VarModel::predict(std::span<const Vector> lags, const Vector& next_aux) const {
    if (lags.size() < order) fail(ErrorKind::InsufficientHistory, "VAR prediction needs " + std::to_string(order) + " lags");
    Vector x = B * next_aux;
    if (has_intercept) x += intercept;
    for (std::size_t i = 0; i < order; ++i) x += A[i] * lags[i];
    return x;
}

VarDesign var_design(std::span<const SpatialSeries> segments, std::size_t order, bool intercept,
                     std::span<const std::size_t> aux_columns) {
    if (segments.empty()) fail(ErrorKind::InsufficientData, "VAR design needs at least one segment");
    const std::size_t n = segments.front().n_locations();
    const auto cols = resolve_columns(aux_columns, segments.front().n_aux());
    const std::size_t width = order * n + cols.size() + (intercept ? 1 : 0);
    std::size_t rows = 0;
    for (const auto& s : segments) rows += s.length() > order ? s.length() - order : 0;
    VarDesign d{Matrix::Zero(idx(rows), idx(width)), Matrix::Zero(idx(rows), idx(n))};
    std::size_t r = 0;
    for (const auto& s : segments) {
        for (std::size_t t = order; t < s.length(); ++t, ++r) {
            for (std::size_t l = 0; l < order; ++l) {
                d.X.block(idx(r), idx(l * n), 1, idx(n)) = s.signals.row(idx(t - 1 - l));
            }
            for (std::size_t k = 0; k < cols.size(); ++k) d.X(idx(r), idx(order * n + k)) = s.aux(idx(t), idx(cols[k]));
            if (intercept) d.X(idx(r), idx(width - 1)) = 1.0;
            d.Y.row(idx(r)) = s.signals.row(idx(t));
        }
    }
    return d;
}

std::vector<std::size_t> independent_aux_columns(std::span<const SpatialSeries> segments, bool intercept,
                                                 double tolerance) {
    if (segments.empty()) return {};
    std::size_t rows = 0;
    for (const auto& s : segments) rows += s.length();
    const std::size_t p = segments.front().n_aux();
    std::vector<Vector> basis;
    if (intercept) basis.push_back(Vector::Constant(idx(rows), 1.0 / std::sqrt(static_cast<double>(rows))));
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < p; ++c) {
        Vector v(idx(rows));
        std::size_t r = 0;
        for (const auto& s : segments) {
            v.segment(idx(r), idx(s.length())) = s.aux.col(idx(c));
            r += s.length();
        }
        const double norm0 = v.norm();
        if (norm0 == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : basis) v -= b.dot(v) * b;
        }
        const double norm = v.norm();
        if (norm <= tolerance * norm0) continue;
        basis.push_back(v / norm);
        kept.push_back(c);
    }
    return kept;
}

VarModel fit_var(const SpatialSeries& series, const VarOptions& options) {
    return fit_var(std::span<const SpatialSeries>(&series, 1), options);
}

VarModel fit_var(std::span<const SpatialSeries> segments, const VarOptions& options) {
    if (options.order == 0) fail(ErrorKind::Configuration, "VAR order must be at least 1");
    if (segments.empty()) fail(ErrorKind::InsufficientData, "VAR fit needs data");
    const std::size_t n = segments.front().n_locations();
    const std::size_t p_all = segments.front().n_aux();
    for (const auto& s : segments) {
        if (s.n_locations() != n || s.n_aux() != p_all) fail(ErrorKind::Dimension, "VAR segments differ in width");
    }
    const auto cols = resolve_columns(options.aux_columns, p_all);
    const VarDesign d = var_design(segments, options.order, options.intercept, cols);
    const auto width = d.X.cols();
    if (d.X.rows() <= width) {
        fail(ErrorKind::InsufficientData, "VAR(" + std::to_string(options.order) + ") has " + std::to_string(width) +
                                              " regressors but only " + std::to_string(d.X.rows()) + " usable rows");
    }

    Matrix G = d.X.transpose() * d.X;
    const Vector diag = G.diagonal();
    for (Eigen::Index k = 0; k < width; ++k) {
        if (!(diag(k) > 0.0)) fail(ErrorKind::SingularDesign, "VAR regressor column " + std::to_string(k) + " is all zero");
    }
    const Vector inv_sqrt = diag.array().rsqrt();
    const Matrix C = inv_sqrt.asDiagonal() * G * inv_sqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(C, Eigen::EigenvaluesOnly);
    const double min_eig = eig.eigenvalues().minCoeff();
    if (!(min_eig > kSingularEigen)) {
        std::ostringstream msg;
        msg << "VAR design is rank deficient (smallest normalized Gram eigenvalue " << min_eig
            << "); drop collinear aux columns or disable the intercept";
        fail(ErrorKind::SingularDesign, msg.str());
    }
    G.diagonal().array() += options.ridge;
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success) fail(ErrorKind::SingularDesign, "VAR Gram matrix is not positive definite");
    const Matrix beta = llt.solve(d.X.transpose() * d.Y);  // width x N

    VarModel m;
    m.order = options.order;
    m.n_locations = n;
    m.n_aux = p_all;
    m.has_intercept = options.intercept;
    m.aux_columns = cols;
    for (std::size_t l = 0; l < options.order; ++l) {
        m.A.push_back(beta.block(idx(l * n), 0, idx(n), idx(n)).transpose());
    }
    m.B = Matrix::Zero(idx(n), idx(p_all));
    for (std::size_t k = 0; k < cols.size(); ++k) m.B.col(idx(cols[k])) = beta.row(idx(options.order * n + k)).transpose();
    m.intercept = options.intercept ? Vector(beta.row(width - 1).transpose()) : Vector::Zero(idx(n));
    return m;
}

Matrix forecast_var(const VarModel& model, const Matrix& history, const Matrix& future_aux, std::size_t horizon) {
    if (static_cast<std::size_t>(history.rows()) < model.order) {
        fail(ErrorKind::InsufficientHistory, "VAR(" + std::to_string(model.order) + ") forecast got only " +
                                                 std::to_string(history.rows()) + " history rows");
    }
    if (static_cast<std::size_t>(history.cols()) != model.n_locations) fail(ErrorKind::Dimension, "VAR history width");
    if (static_cast<std::size_t>(future_aux.rows()) < horizon ||
        static_cast<std::size_t>(future_aux.cols()) != model.n_aux) {
        fail(ErrorKind::Dimension, "VAR future aux must be at least horizon x P");
    }
    // lags[0] is the most recent signal.
    std::vector<Vector> lags;
    for (std::size_t l = 0; l < model.order; ++l) lags.push_back(history.row(history.rows() - 1 - idx(l)).transpose());
    Matrix out(idx(horizon), idx(model.n_locations));
    for (std::size_t k = 0; k < horizon; ++k) {
        const Vector x = model.predict(lags, future_aux.row(idx(k)).transpose());
        out.row(idx(k)) = x.transpose();
        lags.insert(lags.begin(), x);
        lags.pop_back();
    }
    return out;
}

void save_var(const std::string& path, const VarModel& model, const std::string& config_hash) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    nlohmann::json header = {{"format", "var"},
                             {"order", model.order},
                             {"n_locations", model.n_locations},
                             {"n_aux", model.n_aux},
                             {"intercept", model.has_intercept},
                             {"aux_columns", model.aux_columns}};
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    out << "# " << header.dump() << '\n';
    for (std::size_t l = 0; l < model.order; ++l) write_block(out, "A" + std::to_string(l + 1), model.A[l]);
    write_block(out, "B", model.B);
    write_block(out, "intercept", model.intercept.transpose());
}

VarModel load_var(const std::string& path, std::string* config_hash) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Dependency, "missing VAR model " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0) fail(ErrorKind::Parse, path + ": missing JSON header");
    VarModel m;
    try {
        const auto header = nlohmann::json::parse(line.substr(2));
        m.order = header.at("order").get<std::size_t>();
        m.n_locations = header.at("n_locations").get<std::size_t>();
        m.n_aux = header.at("n_aux").get<std::size_t>();
        m.has_intercept = header.at("intercept").get<bool>();
        m.aux_columns = header.at("aux_columns").get<std::vector<std::size_t>>();
        if (config_hash) *config_hash = header.value("config_hash", std::string{});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Parse, path + ": bad header: " + e.what());
    }
    auto read_block = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        if (!std::getline(in, line) || line != "[" + name + "]") fail(ErrorKind::Parse, path + ": expected block " + name);
        Matrix b(idx(rows), idx(cols));
        for (std::size_t r = 0; r < rows; ++r) {
            if (!std::getline(in, line)) fail(ErrorKind::Parse, path + ": block " + name + " truncated");
            std::istringstream row(line);
            std::string cell;
            for (std::size_t c = 0; c < cols; ++c) {
                if (!std::getline(row, cell, ',')) fail(ErrorKind::Parse, path + ": short row in block " + name);
                try {
                    b(idx(r), idx(c)) = std::stod(cell);
                } catch (const std::exception&) {
                    fail(ErrorKind::Parse, path + ": bad number '" + cell + "' in block " + name);
                }
            }
        }
        return b;
    };
    for (std::size_t l = 0; l < m.order; ++l) m.A.push_back(read_block("A" + std::to_string(l + 1), m.n_locations, m.n_locations));
    m.B = read_block("B", m.n_locations, m.n_aux);
    m.intercept = read_block("intercept", 1, m.n_locations).row(0).transpose();
    return m;
}

}  // namespace forecaster::baselines
