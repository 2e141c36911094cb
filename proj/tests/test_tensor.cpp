#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "normalcast/rng.hpp"
#include "normalcast/tensor.hpp"

using namespace ncast;
namespace fs = std::filesystem;

namespace {
std::string tmp_path(const std::string& name) {
    fs::path d = fs::temp_directory_path() / "ncast_tensor_tests";
    fs::create_directories(d);
    return (d / name).string();
}
}  // namespace

TEST_CASE("tensor shape and reshape") {
    Tensor t({2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    Tensor r = t.reshaped({4, 6});
    CHECK(r.dim(0) == 4);
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
}

TEST_CASE("ntf f32 round trip") {
    Rng rng(1);
    Tensor t({3, 4, 5});
    for (long long i = 0; i < t.size(); ++i) t[i] = (float)rng.normal();
    std::string p = tmp_path("a.ntf");
    ntf_write_f32(p, t);
    Tensor back = ntf_read_f32(p);
    REQUIRE(back.shape() == t.shape());
    for (long long i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
    CHECK(ntf_peek_type(p) == NtfType::F32);
}

TEST_CASE("ntf u8 and bool round trips") {
    std::vector<uint8_t> bytes = {0, 1, 127, 128, 255, 3};
    std::string p = tmp_path("b.ntf");
    ntf_write_u8(p, {2, 3}, bytes);
    Tensor f = ntf_read_u8_as_float(p);
    CHECK(f[0] == 0.0f);
    CHECK(f[4] == 1.0f);
    CHECK(f[2] == doctest::Approx(127.0f / 255.0f));

    Mask m({2, 2});
    m.set(0, true);
    m.set(3, true);
    std::string q = tmp_path("c.ntf");
    ntf_write_bool(q, m);
    Mask back = ntf_read_bool(q);
    CHECK(back.get(0));
    CHECK(!back.get(1));
    CHECK(back.get(3));
    CHECK(back.count() == 2);
}

TEST_CASE("ntf header sanity") {
    std::string p = tmp_path("bad.ntf");
    FILE* f = std::fopen(p.c_str(), "wb");
    std::fputs("not a tensor file", f);
    std::fclose(f);
    CHECK_THROWS_AS(ntf_read_f32(p), IoError);

    // magic block is 16 bytes with the tag in front
    std::string good = tmp_path("d.ntf");
    ntf_write_f32(good, Tensor({1}, 2.5f));
    std::ifstream in(good, std::ios::binary);
    char head[16];
    in.read(head, 16);
    CHECK(std::string(head, 8) == "NTENSOR1");
    for (int i = 8; i < 16; ++i) CHECK(head[i] == 0);
}

TEST_CASE("checksum changes with content") {
    Tensor a({4}, 1.0f), b({4}, 1.0f);
    CHECK(bytes_checksum(a.data(), 4) == bytes_checksum(b.data(), 4));
    b[2] += 1e-7f;
    CHECK(bytes_checksum(a.data(), 4) != bytes_checksum(b.data(), 4));
}

TEST_CASE("rng determinism and stats") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);

    Rng u(9);
    long long c = 0;
    for (int i = 0; i < 100000; ++i)
        if (u.uniform_int(1, 10) == 5) ++c;
    CHECK(std::abs(c / 100000.0 - 0.1) < 0.01);
}
