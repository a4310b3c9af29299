#include "lrc/rng.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

using lrc::Rng;

TEST_CASE("identical seeds give identical streams", "[rng]") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("stream for seed 42 is frozen", "[rng]") {
    // Reference values locked in so an accidental algorithm change is loud.
    Rng r(42);
    CHECK(r.next_u64() == 0x57e1faba65107204ull);
    CHECK(r.next_u64() == 0xf4abd143feb24055ull);
    CHECK(r.next_u64() == 0x7c816738c12903b2ull);
    CHECK(r.next_u64() == 0x113e5dec6f8fd8a8ull);
}

TEST_CASE("fork derives independent streams without advancing the parent", "[rng]") {
    Rng r(42);
    Rng c7 = r.fork(7);
    CHECK(c7.next_u64() == 0xee4e76e217835d70ull);
    // parent continues exactly as if fork had never happened
    CHECK(r.next_u64() == 0x57e1faba65107204ull);
    // distinct tags, distinct streams
    Rng p(9);
    CHECK(p.fork(1).next_u64() != p.fork(2).next_u64());
}

TEST_CASE("uniform01 stays in [0,1) with a sane mean", "[rng]") {
    Rng r(7);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double u = r.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / 20000.0 - 0.5) < 0.01);
}

TEST_CASE("uniform_int covers the full range and nothing more", "[rng]") {
    Rng r(11);
    std::set<uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        uint64_t v = r.uniform_int(7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("normal samples have the requested moments", "[rng]") {
    Rng r(13);
    const int n = 50000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double x = r.normal(2.0, 3.0);
        s1 += x;
        s2 += x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean - 2.0) < 0.05);
    CHECK(std::abs(var - 9.0) < 0.25);
}
