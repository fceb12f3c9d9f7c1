#pragma once

// Shared synthetic fixtures for the unit tests and the acceptance binary.

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "forecaster/series.hpp"

namespace fixture {

struct KnownVar {
    std::vector<Eigen::MatrixXd> A;  // A[0] multiplies x_{t-1}
    Eigen::MatrixXd B;
    Eigen::VectorXd c;
};

// A stable order-2 VAR with exogenous inputs on 3 locations and 2 aux columns.
inline KnownVar known_var2() {
    KnownVar v;
    Eigen::MatrixXd a1(3, 3), a2(3, 3), b(3, 2);
    a1 << 0.5, 0.1, 0.0,
          -0.2, 0.4, 0.1,
          0.0, 0.15, 0.3;
    a2 << 0.1, 0.0, -0.05,
          0.0, -0.1, 0.0,
          0.05, 0.0, 0.2;
    b << 1.0, -0.5,
         0.3, 0.8,
         -0.7, 0.2;
    v.A = {a1, a2};
    v.B = b;
    v.c = Eigen::Vector3d(0.5, -1.0, 2.0);
    return v;
}

// Noiseless series from `v` driven by random aux inputs; `noise` adds Gaussian innovations.
inline forecaster::SpatialSeries simulate_var(const KnownVar& v, std::size_t length, unsigned seed, double noise = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    const auto n = v.B.rows();
    const auto p = v.B.cols();
    forecaster::SpatialSeries s;
    s.signals = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(length), n);
    s.aux = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(length), p);
    for (std::size_t t = 0; t < length; ++t) {
        s.timestamps.push_back(static_cast<std::int64_t>(t));
        for (Eigen::Index k = 0; k < p; ++k) s.aux(static_cast<Eigen::Index>(t), k) = nd(rng);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        s.signals(0, i) = nd(rng);
        if (length > 1) s.signals(1, i) = nd(rng);
        s.location_ids.push_back(std::to_string(i));
    }
    for (Eigen::Index k = 0; k < p; ++k) s.aux_names.push_back("a" + std::to_string(k));
    for (std::size_t t = v.A.size(); t < length; ++t) {
        const auto ti = static_cast<Eigen::Index>(t);
        Eigen::VectorXd x = v.B * s.aux.row(ti).transpose() + v.c;
        for (std::size_t l = 0; l < v.A.size(); ++l) x += v.A[l] * s.signals.row(ti - 1 - static_cast<Eigen::Index>(l)).transpose();
        for (Eigen::Index i = 0; i < n; ++i) x(i) += noise * nd(rng);
        s.signals.row(ti) = x.transpose();
    }
    return s;
}

}  // namespace fixture
