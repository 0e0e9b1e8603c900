#include <doctest.h>

#include <cmath>
#include <sstream>

#include "relseg/tensor.hpp"

using namespace relseg;

TEST_CASE("tensor construction and indexing") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

    Tensor u({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(u.at3(0, 0, 0) == 1);
    CHECK(u.at3(0, 1, 1) == 4);
    CHECK(u.at3(1, 0, 1) == 6);
    CHECK(u.at3(1, 1, 0) == 7);

    CHECK_THROWS(Tensor({2, 2}, {1, 2, 3}));
}

TEST_CASE("elementwise ops with trailing broadcast") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {10, 20, 30, 40});
    CHECK(add(a, b).raw() == std::vector<double>{11, 22, 33, 44});
    CHECK(sub(b, a).raw() == std::vector<double>{9, 18, 27, 36});
    CHECK(mul(a, b).raw() == std::vector<double>{10, 40, 90, 160});
    CHECK(scale(a, -2.0).raw() == std::vector<double>{-2, -4, -6, -8});

    // (2,2) * (2,) broadcasts over the trailing axis
    Tensor row({2}, {10, 100});
    CHECK(mul(a, row).raw() == std::vector<double>{10, 200, 30, 400});

    CHECK_THROWS(add(a, Tensor({3}, {1, 2, 3})));
}

TEST_CASE("stabilized division sign-matches the epsilon") {
    Tensor num({4}, {1, 1, 1, 1});
    Tensor den({4}, {2, -2, 0.5, -0.5});

    Tensor exact = stabilized_div(num, den, 0.0);
    CHECK(exact[0] == doctest::Approx(0.5));
    CHECK(exact[1] == doctest::Approx(-0.5));

    Tensor stab = stabilized_div(num, den, 1.0);
    CHECK(stab[0] == doctest::Approx(1.0 / 3.0));   // 2 + 1
    CHECK(stab[1] == doctest::Approx(-1.0 / 3.0));  // -2 - 1
    CHECK(stab[2] == doctest::Approx(1.0 / 1.5));
    CHECK(stab[3] == doctest::Approx(-1.0 / 1.5));

    // sign(0) = +1: a zero denominator gets +epsilon
    Tensor zero_den({1}, {0.0});
    Tensor one({1}, {1.0});
    CHECK(stabilized_div(one, zero_den, 0.5)[0] == doctest::Approx(2.0));
    CHECK_THROWS(stabilized_div(one, zero_den, 0.0));
}

TEST_CASE("reduce_sum removes the reduced axes") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor rows = reduce_sum(a, {1});
    CHECK(rows.shape() == std::vector<std::size_t>{2});
    CHECK(rows.raw() == std::vector<double>{6, 15});

    Tensor cols = reduce_sum(a, {0});
    CHECK(cols.raw() == std::vector<double>{5, 7, 9});

    Tensor all = reduce_sum(a, {0, 1});
    CHECK(all.shape() == std::vector<std::size_t>{1});
    CHECK(all[0] == 21);
    CHECK(sum_all(a) == 21);
}

TEST_CASE("flip_spatial reverses both kernel axes") {
    Tensor k({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor f = flip_spatial(k);
    CHECK(f.raw() == std::vector<double>{6, 5, 4, 3, 2, 1});
    CHECK_THROWS(flip_spatial(Tensor({2, 2}, {1, 2, 3, 4})));
}

TEST_CASE("heaviside and relu agree via h(z)*z") {
    Tensor z({5}, {-2, -0.5, 0, 0.5, 2});
    Tensor h = heaviside(z);
    CHECK(h.raw() == std::vector<double>{0, 0, 0, 1, 1});
    CHECK(mul(h, z).raw() == relu(z).raw());
}

TEST_CASE("check_finite rejects NaN and Inf") {
    Tensor ok({2}, {1, 2});
    CHECK_NOTHROW(check_finite(ok, "test"));
    Tensor bad({2}, {1, std::nan("")});
    CHECK_THROWS(check_finite(bad, "test"));
    Tensor inf({1}, {INFINITY});
    CHECK_THROWS(check_finite(inf, "test"));
}

TEST_CASE("max_rel_diff uses the reference magnitude") {
    Tensor a({2}, {1.0, 2.0});
    Tensor b({2}, {1.0, 2.0 + 2e-6});
    CHECK(max_rel_diff(a, b) == doctest::Approx(1e-6).epsilon(0.01));
    CHECK(max_abs_diff(a, b) == doctest::Approx(2e-6));
    CHECK(max_rel_diff(a, a) == 0.0);
}

TEST_CASE("tensor serialization round-trips and pins the layout") {
    Tensor t({2, 1, 2}, {1.5, -2.25, 0.0, 1e300});
    std::stringstream ss;
    write_tensor(ss, t);
    const std::string bytes = ss.str();
    // "RNT1" + u32 rank + 3 x u64 dims + 4 x f64
    CHECK(bytes.size() == 4 + 4 + 3 * 8 + 4 * 8);
    CHECK(bytes.substr(0, 4) == "RNT1");
    CHECK((unsigned char)bytes[4] == 3);  // rank, little-endian
    CHECK((unsigned char)bytes[8] == 2);  // first dim

    Tensor back = read_tensor(ss);
    CHECK(back == t);

    std::stringstream bad("XXXX");
    CHECK_THROWS(read_tensor(bad));
}

TEST_CASE("seeded rng is deterministic and counter-based") {
    SeededRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        CHECK(va == b.uniform());
        CHECK(va >= 0.0);
        CHECK(va < 1.0);
    }
    CHECK(a.uniform() != c.uniform());

    SeededRng d(7);
    std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> w = v;
    d.shuffle(v);
    SeededRng e(7);
    e.shuffle(w);
    CHECK(v == w);
    CHECK(v != std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});  // 8! odds of identity
}

TEST_CASE("seeded rng normal and bernoulli are sane") {
    SeededRng rng(5);
    double mean = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        mean += x / n;
        sq += x * x / n;
    }
    CHECK(std::abs(mean) < 0.05);
    CHECK(sq == doctest::Approx(1.0).epsilon(0.05));

    int heads = 0;
    for (int i = 0; i < n; ++i) heads += rng.bernoulli(0.25) ? 1 : 0;
    CHECK(std::abs(heads / (double)n - 0.25) < 0.02);
}
