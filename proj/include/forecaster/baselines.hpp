#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "forecaster/series.hpp"

// Vector autoregression with exogenous inputs:
//   x_{t+1} = A_1 x_t + ... + A_p x_{t-p+1} + B a_{t+1} + c
namespace forecaster::baselines {

struct VarOptions {
    std::size_t order = 6;
    bool intercept = true;
    double ridge = 1e-10;  // added to the Gram diagonal
    // Aux columns used as regressors; empty means all of them. Unused columns
    // get zero coefficients in B.
    std::vector<std::size_t> aux_columns;
};

struct VarModel {
    std::size_t order = 0;
    std::size_t n_locations = 0;
    std::size_t n_aux = 0;
    std::vector<Matrix> A;  // order matrices, N x N
    Matrix B;               // N x P
    Vector intercept;       // length N; zero when disabled
    bool has_intercept = false;
    std::vector<std::size_t> aux_columns;

    // One-step prediction from lags (lags[0] = x_t) and a_{t+1}.
    Vector predict(std::span<const Vector> lags, const Vector& next_aux) const;
};

// Stacked regression: row s holds [x_{s-1}, ..., x_{s-p}, a_s (selected), 1] and target x_s.
struct VarDesign {
    Matrix X;
    Matrix Y;
};

VarDesign var_design(std::span<const SpatialSeries> segments, std::size_t order, bool intercept,
                     std::span<const std::size_t> aux_columns);

// Greedy selection of aux columns that are linearly independent of the
// intercept (when enabled) and of previously kept columns.
std::vector<std::size_t> independent_aux_columns(std::span<const SpatialSeries> segments, bool intercept,
                                                 double tolerance = 1e-8);

VarModel fit_var(const SpatialSeries& series, const VarOptions& options = {});
// Segments are fitted jointly without regressing across their boundaries.
VarModel fit_var(std::span<const SpatialSeries> segments, const VarOptions& options = {});

// history: rows oldest to newest (at least `order` rows, N columns);
// future_aux: horizon x P. Returns horizon x N.
Matrix forecast_var(const VarModel& model, const Matrix& history, const Matrix& future_aux, std::size_t horizon);

void save_var(const std::string& path, const VarModel& model, const std::string& config_hash = {});
VarModel load_var(const std::string& path, std::string* config_hash = nullptr);

}  // namespace forecaster::baselines
