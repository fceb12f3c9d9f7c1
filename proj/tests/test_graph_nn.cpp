#include <doctest.h>

#include <random>

#include "forecaster/error.hpp"
#include "forecaster/graph_nn.hpp"

using namespace forecaster;
using ad::Tensor;
using graph_nn::NeuronAllocation;
using graph_nn::SparseLinearSpec;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::Io;
}

gmrf::DependencyGraph graph_of(std::size_t n, std::vector<std::pair<std::size_t, std::size_t>> edges) {
    gmrf::DependencyGraph g;
    g.n_locations = n;
    for (auto [i, j] : edges) g.edges.push_back({std::min(i, j), std::max(i, j), 0.5});
    std::sort(g.edges.begin(), g.edges.end(), [](const auto& a, const auto& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
    return g;
}

gmrf::DependencyGraph random_graph(std::mt19937_64& rng, std::size_t n, double p) {
    std::bernoulli_distribution coin(p);
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (coin(rng)) e.emplace_back(i, j);
        }
    }
    return graph_of(n, e);
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> nd;
    std::vector<double> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

// Dense reference: explicit zeroing by group adjacency, then a plain loop matmul.
std::vector<double> dense_reference(const SparseLinearSpec& spec, const graph_nn::LayerWeights& w,
                                    const std::vector<double>& x, const gmrf::DependencyGraph& g) {
    std::vector<double> y(spec.out_features(), 0.0);
    for (std::size_t o = 0; o < spec.out_features(); ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < spec.in_features(); ++i) {
            const int a = spec.out_groups[o];
            const int b = spec.in_groups[i];
            bool keep;
            if (a < 0 || b < 0) {
                keep = a < 0 && b < 0;
            } else {
                keep = a == b || g.has_edge(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
            }
            if (keep) acc += w.weight(o, i) * x[i];
        }
        y[o] = acc + (spec.bias_enabled ? w.bias.values[o] : 0.0);
    }
    return y;
}

}  // namespace

TEST_CASE("allocation totals") {
    const NeuronAllocation a{3, 1, 2, 2, 3};
    CHECK(a.total_in() == 5);
    CHECK(a.total_out() == 9);
    CHECK(graph_nn::block_layout(3, 2, 3) == std::vector<int>{0, 0, 1, 1, 2, 2, -1, -1, -1});
}

TEST_CASE("two neurons per location with a three-neuron aux block") {
    // Locations 0-1 and 1-2 adjacent; 0 and 2 conditionally independent.
    const auto g = graph_of(3, {{0, 1}, {1, 2}});
    const Tensor m = graph_nn::build_mask({3, 1, 2, 2, 3}, g);
    REQUIRE(m.rows() == 9);
    REQUIRE(m.cols() == 5);
    const std::vector<std::vector<double>> expected = {
        {1, 1, 0, 0, 0}, {1, 1, 0, 0, 0},  // location 0
        {1, 1, 1, 0, 0}, {1, 1, 1, 0, 0},  // location 1
        {0, 1, 1, 0, 0}, {0, 1, 1, 0, 0},  // location 2
        {0, 0, 0, 1, 1}, {0, 0, 0, 1, 1}, {0, 0, 0, 1, 1},  // aux
    };
    for (std::size_t r = 0; r < 9; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
            CAPTURE(r);
            CAPTURE(c);
            CHECK(m(r, c) == expected[r][c]);
        }
    }
}

TEST_CASE("complete graph without aux gives an all-ones mask") {
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) e.emplace_back(i, j);
    }
    const Tensor m = graph_nn::build_mask({4, 2, 3, 0, 0}, graph_of(4, e));
    for (double v : m.values) CHECK(v == 1.0);
}

TEST_CASE("empty graph gives a block-diagonal mask") {
    const Tensor m = graph_nn::build_mask({3, 2, 2, 1, 1}, graph_of(3, {}));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) CHECK(m(r, c) == (r / 2 == c / 2 ? 1.0 : 0.0));
    }
}

TEST_CASE("nonzero count of random masks") {
    std::mt19937_64 rng(21);
    for (int k = 0; k < 20; ++k) {
        const std::size_t n = 2 + rng() % 8;
        const auto g = random_graph(rng, n, 0.3);
        const NeuronAllocation a{n, 1 + rng() % 3, 1 + rng() % 3, rng() % 4, rng() % 4};
        const Tensor m = graph_nn::build_mask(a, g);
        CHECK(graph_nn::count_nonzeros(m) ==
              a.per_location_out * a.per_location_in * (n + 2 * g.edges.size()) + a.aux_out * a.aux_in);
    }
}

TEST_CASE("mask block invariants on random graphs") {
    std::mt19937_64 rng(22);
    const auto g = random_graph(rng, 7, 0.4);
    const auto spec = SparseLinearSpec::make({7, 2, 3, 4, 5}, g);
    for (std::size_t o = 0; o < spec.out_features(); ++o) {
        for (std::size_t i = 0; i < spec.in_features(); ++i) {
            const int a = spec.out_groups[o];
            const int b = spec.in_groups[i];
            double expect;
            if (a < 0 && b < 0) {
                expect = 1.0;
            } else if (a < 0 || b < 0) {
                expect = 0.0;
            } else {
                expect = (a == b || g.has_edge(a, b)) ? 1.0 : 0.0;
            }
            CHECK(spec.mask(o, i) == expect);
        }
    }
}

TEST_CASE("node-count mismatch is a configuration error") {
    CHECK(kind_of([] { graph_nn::build_mask({4, 1, 1, 0, 0}, graph_of(3, {})); }) == ErrorKind::Configuration);
}

TEST_CASE("identity self-blocks copy location inputs") {
    const auto g = graph_of(3, {{0, 1}});
    const auto spec = SparseLinearSpec::make({3, 2, 2, 1, 1}, g);
    Tensor w = Tensor::zeros(7, 7);
    for (std::size_t k = 0; k < 7; ++k) w(k, k) = 1.0;
    const Tensor bias = Tensor::zeros(1, 7);
    const std::vector<double> x = {1, 2, 3, 4, 5, 6, 7};
    CHECK(graph_nn::sparse_linear_forward(spec, w, bias, x) == x);
}

TEST_CASE("forward matches the dense reference and is local") {
    std::mt19937_64 rng(23);
    for (int k = 0; k < 10; ++k) {
        const std::size_t n = 3 + rng() % 5;
        const auto g = random_graph(rng, n, 0.35);
        const auto spec = SparseLinearSpec::make({n, 2, 3, 2, 4}, g);
        auto w = graph_nn::init_weights(spec, 100 + k);
        std::normal_distribution<double> nd;
        for (auto& b : w.bias.values) b = nd(rng);
        const auto x = random_vector(rng, spec.in_features());
        const auto y = graph_nn::sparse_linear_forward(spec, w.weight, w.bias, x);
        const auto ref = dense_reference(spec, w, x, g);
        for (std::size_t o = 0; o < y.size(); ++o) CHECK(y[o] == doctest::Approx(ref[o]).epsilon(1e-13));

        // Perturb one location's inputs and every aux input.
        const std::size_t j = rng() % n;
        auto xp = x;
        for (std::size_t i = 0; i < spec.in_features(); ++i) {
            if (spec.in_groups[i] == static_cast<int>(j) || spec.in_groups[i] < 0) xp[i] += 3.0;
        }
        const auto yp = graph_nn::sparse_linear_forward(spec, w.weight, w.bias, xp);
        for (std::size_t o = 0; o < y.size(); ++o) {
            const int a = spec.out_groups[o];
            if (a >= 0 && static_cast<std::size_t>(a) != j && !g.has_edge(a, j)) CHECK(yp[o] == y[o]);
        }
    }
}

TEST_CASE("tape jacobian is zero between non-adjacent locations") {
    std::mt19937_64 rng(24);
    const auto g = random_graph(rng, 6, 0.3);
    const auto spec = SparseLinearSpec::make({6, 2, 2, 3, 3}, g);
    auto w = graph_nn::init_weights(spec, 5);
    const auto x = random_vector(rng, spec.in_features());
    for (std::size_t o = 0; o < spec.out_features(); ++o) {
        if (spec.out_groups[o] < 0) continue;
        ad::Tape tape;
        Tensor in({1, spec.in_features()}, x);
        const ad::Var xv = tape.parameter(in);
        const ad::Var y = graph_nn::sparse_linear(tape, spec, xv, tape.constant(w.weight), tape.constant(w.bias));
        tape.backward(tape.split(y, 1, o, 1));
        for (std::size_t i = 0; i < spec.in_features(); ++i) {
            const int b = spec.in_groups[i];
            const int a = spec.out_groups[o];
            if (b < 0 || (a != b && !g.has_edge(a, b))) CHECK((*in.grad)[i] == 0.0);
        }
    }
}

TEST_CASE("dense equivalence with a complete graph and full aux wiring") {
    std::mt19937_64 rng(25);
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = i + 1; j < 4; ++j) e.emplace_back(i, j);
    }
    const auto spec = SparseLinearSpec::make({4, 2, 2, 0, 0}, graph_of(4, e));
    const auto w = graph_nn::init_weights(spec, 1);
    Tensor x({3, 8}, random_vector(rng, 24));
    ad::Tape tape;
    const Tensor sparse = tape.value(graph_nn::sparse_linear(tape, spec, tape.constant(x), tape.constant(w.weight),
                                                            tape.constant(w.bias)));
    const Tensor dense =
        tape.value(tape.add_row_vector(tape.linear(tape.constant(x), tape.constant(w.weight)), tape.constant(w.bias)));
    CHECK(sparse.values == dense.values);
}

TEST_CASE("sparse embedding is relu of the linear map") {
    std::mt19937_64 rng(26);
    const auto g = graph_of(3, {{1, 2}});
    const auto spec = SparseLinearSpec::make({3, 1, 2, 2, 2}, g);
    const auto w = graph_nn::init_weights(spec, 3);
    Tensor neg_bias = Tensor::filled(1, spec.out_features(), -100.0);
    const std::vector<double> x = {0.1, -0.2, 0.3, 0.05, -0.1};
    for (double v : graph_nn::sparse_embedding(spec, w.weight, neg_bias, x)) CHECK(v == 0.0);

    Tensor pos_bias = Tensor::filled(1, spec.out_features(), 100.0);
    CHECK(graph_nn::sparse_embedding(spec, w.weight, pos_bias, x) ==
          graph_nn::sparse_linear_forward(spec, w.weight, pos_bias, x));

    const auto xr = random_vector(rng, 5);
    const auto lin = graph_nn::sparse_linear_forward(spec, w.weight, w.bias, xr);
    const auto emb = graph_nn::sparse_embedding(spec, w.weight, w.bias, xr);
    for (std::size_t k = 0; k < lin.size(); ++k) CHECK(emb[k] == std::max(0.0, lin[k]));
}

TEST_CASE("initialization respects the mask and is reproducible") {
    std::mt19937_64 rng(27);
    const auto g = random_graph(rng, 6, 0.3);
    const auto spec = SparseLinearSpec::make({6, 3, 2, 4, 4}, g);
    const auto a = graph_nn::init_weights(spec, 9);
    const auto b = graph_nn::init_weights(spec, 9);
    const auto c = graph_nn::init_weights(spec, 10);
    CHECK(a.weight.values == b.weight.values);
    CHECK(a.weight.values != c.weight.values);
    for (std::size_t k = 0; k < a.weight.size(); ++k) {
        if (spec.mask.values[k] == 0.0) CHECK(a.weight.values[k] == 0.0);
    }
    for (double v : a.bias.values) CHECK(v == 0.0);
    CHECK_NOTHROW(graph_nn::check_mask_integrity(spec, a.weight, "w"));
    Tensor bad = a.weight;
    for (std::size_t k = 0; k < bad.size(); ++k) {
        if (spec.mask.values[k] == 0.0) {
            bad.values[k] = 1e-300;
            break;
        }
    }
    CHECK(kind_of([&] { graph_nn::check_mask_integrity(spec, bad, "w"); }) == ErrorKind::Integrity);
}

TEST_CASE("fully masked rows stay zero") {
    // Output neurons of the aux block see no inputs when aux_in is zero.
    const auto spec = SparseLinearSpec::make({2, 1, 1, 0, 2}, graph_of(2, {}));
    const auto w = graph_nn::init_weights(spec, 4);
    for (std::size_t c = 0; c < spec.in_features(); ++c) {
        CHECK(w.weight(2, c) == 0.0);
        CHECK(w.weight(3, c) == 0.0);
    }
}

TEST_CASE("unmasked entries follow the effective-fan glorot variance") {
    // Complete graph: every neuron has the same effective fans.
    std::vector<std::pair<std::size_t, std::size_t>> e;
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = i + 1; j < 10; ++j) e.emplace_back(i, j);
    }
    const auto spec = SparseLinearSpec::make({10, 12, 12, 0, 0}, graph_of(10, e));
    const auto w = graph_nn::init_weights(spec, 77);
    const double fan_in = 120.0;
    const double fan_out = 120.0;
    const double target = 2.0 / (fan_in + fan_out);
    double sum = 0.0, sq = 0.0;
    for (double v : w.weight.values) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(w.weight.size());
    REQUIRE(n >= 1e4);
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(std::abs(var - target) < 0.2 * target);

    // Sparse case: empty graph, so each location neuron has fan 12 + 12.
    const auto s2 = SparseLinearSpec::make({100, 12, 12, 0, 0}, graph_of(100, {}));
    const auto w2 = graph_nn::init_weights(s2, 78);
    sum = sq = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < w2.weight.size(); ++k) {
        if (s2.mask.values[k] == 0.0) continue;
        sum += w2.weight.values[k];
        sq += w2.weight.values[k] * w2.weight.values[k];
        ++cnt;
    }
    REQUIRE(cnt >= 10000);
    const double m2 = sum / cnt;
    const double var2 = sq / cnt - m2 * m2;
    CHECK(std::abs(var2 - 2.0 / 24.0) < 0.2 * 2.0 / 24.0);
}
