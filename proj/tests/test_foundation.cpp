#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "prefdrive/common.hpp"
#include "prefdrive/io.hpp"
#include "prefdrive/linalg.hpp"
#include "prefdrive/rng.hpp"

using namespace prefdrive;

TEST_SUITE("foundation") {

TEST_CASE("rng: same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: derived streams are independent of draw order") {
    Rng root(7);
    Rng a = root.derive("alpha");
    Rng b = root.derive("beta");
    const auto a0 = a.next_u64();
    (void)b.next_u64();

    Rng root2(7);
    Rng b2 = root2.derive("beta");
    Rng a2 = root2.derive("alpha");
    (void)b2.next_u64();
    CHECK(a2.next_u64() == a0);
}

TEST_CASE("rng: derive distinguishes label and index") {
    Rng root(7);
    std::set<std::uint64_t> seen;
    seen.insert(root.derive("a", 0).next_u64());
    seen.insert(root.derive("a", 1).next_u64());
    seen.insert(root.derive("b", 0).next_u64());
    seen.insert(root.derive("ab", 0).next_u64());
    CHECK(seen.size() == 4);
}

TEST_CASE("rng: uniform01 stays in [0,1) and is roughly uniform") {
    Rng r(3);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("rng: normal has the right first two moments") {
    Rng r(11);
    const int n = 200000;
    double s = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        ss += x * x;
    }
    const double m = s / n;
    const double var = ss / n - m * m;
    CHECK(std::abs(m) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng: uniform_int covers the range uniformly") {
    Rng r(5);
    std::vector<int> counts(10, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[r.uniform_int(10)];
    for (int c : counts) CHECK(std::abs(c - n / 10) < 500);
}

TEST_CASE("stats: sample sd uses the n-1 denominator") {
    const std::vector<double> v{0, 0, 0, 0, 10};
    CHECK(stats::mean(v) == doctest::Approx(2.0));
    CHECK(stats::sample_sd(v) == doctest::Approx(std::sqrt(20.0)));
}

TEST_CASE("stats: median of odd and even samples") {
    CHECK(stats::median({3, 1, 2}) == doctest::Approx(2.0));
    CHECK(stats::median({4, 1, 3, 2}) == doctest::Approx(2.5));
}

TEST_CASE("linalg: cholesky solve matches a hand-checked system") {
    linalg::Matrix a(2, 2);
    a(0, 0) = 4;
    a(0, 1) = 2;
    a(1, 0) = 2;
    a(1, 1) = 3;
    const std::vector<double> b{2, 5};
    const auto x = linalg::cholesky_solve(a, b);
    // solution of [[4,2],[2,3]] x = [2,5] is x = (-0.5, 2)
    CHECK(x[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("linalg: cholesky rejects an indefinite matrix") {
    linalg::Matrix a(2, 2);
    a(0, 0) = 1;
    a(0, 1) = 2;
    a(1, 0) = 2;
    a(1, 1) = 1;
    CHECK_THROWS_AS(linalg::cholesky_solve(a, {1, 1}), std::runtime_error);
}

TEST_CASE("linalg: solve residual on a random SPD system") {
    Rng r(9);
    const std::size_t n = 16;
    linalg::Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) g(i, j) = r.normal();
    // A = G G^T + I is SPD
    linalg::Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = i == j ? 1.0 : 0.0;
            for (std::size_t k = 0; k < n; ++k) s += g(i, k) * g(j, k);
            a(i, j) = s;
        }
    std::vector<double> b(n);
    for (auto& v : b) v = r.normal();
    const auto x = linalg::cholesky_solve(a, b);
    const auto ax = linalg::mat_vec(a, x);
    for (std::size_t i = 0; i < n; ++i) CHECK(ax[i] == doctest::Approx(b[i]).epsilon(1e-9));
}

TEST_CASE("config: parses keys, comments, and types") {
    const auto cfg = io::KeyValueConfig::parse_text(
        "# comment line\n"
        "env.road_length = 1000\n"
        "dqn.gamma=0.99\n"
        "\n"
        "report.enabled = true\n");
    CHECK(cfg.get_int("env.road_length", 0) == 1000);
    CHECK(cfg.get_double("dqn.gamma", 0.0) == doctest::Approx(0.99));
    CHECK(cfg.get_bool("report.enabled", false));
    CHECK(cfg.get_double("missing.key", 1.5) == doctest::Approx(1.5));
}

TEST_CASE("config: malformed line reports its origin and line number") {
    try {
        io::KeyValueConfig::parse_text("a=1\nnot a pair\n", "test.cfg");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("test.cfg") != std::string::npos);
        CHECK(msg.find("2") != std::string::npos);
    }
}

TEST_CASE("fmt: doubles round-trip through their printed form") {
    const std::vector<double> cases{0.0,  1.0,          -1.5,      0.1,
                                    1e-9, 12345.678901, 1.0 / 3.0, 2.5e17};
    for (double x : cases) {
        const std::string s = io::fmt(x);
        CHECK(std::stod(s) == x);
    }
}

TEST_CASE("fnv1a: known vector and sensitivity") {
    // FNV-1a 64-bit of the empty string is the offset basis
    CHECK(io::fnv1a_bytes("") == 0xcbf29ce484222325ULL);
    CHECK(io::fnv1a_bytes("a") != io::fnv1a_bytes("b"));
}

TEST_CASE("text file round-trip") {
    const std::string path = "test_io_roundtrip.txt";
    io::write_text_file(path, "line1\nline2\n");
    CHECK(io::read_text_file(path) == "line1\nline2\n");
    std::remove(path.c_str());
}

} // TEST_SUITE
