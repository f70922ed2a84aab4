#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lore/checkpoint.hpp"
#include "lore/image_io.hpp"
#include "lore/tensor_io.hpp"
#include "test_util.hpp"

using namespace lore;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "lore_io_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("tensor blob round trip") {
    Rng rng(4);
    auto t = Tensor<float>::randn({3, 5, 2}, rng);
    std::stringstream ss;
    write_tensor_blob(ss, t);
    auto back = read_tensor_blob(ss);
    CHECK(back.shape() == t.shape());
    CHECK(lore_test::bitwise_equal(back, t));
}

TEST_CASE("tensor blob rejects bad magic") {
    std::stringstream ss;
    ss << "NOPE";
    CHECK_THROWS_AS((void)read_tensor_blob(ss), io_error);
}

TEST_CASE("byte mapping endpoints") {
    CHECK(byte_to_float(0) == -1.0f);
    CHECK(byte_to_float(255) == 1.0f);
    CHECK(float_to_byte(-1.0f) == 0);
    CHECK(float_to_byte(1.0f) == 255);
    // round-half-up at the first midpoint: p = 0.5 exactly
    CHECK(float_to_byte(-1.0f + 1.0f / 255.0f) == 1);
    // quantization is idempotent
    for (int p = 0; p < 256; ++p) CHECK(float_to_byte(byte_to_float(uint8_t(p))) == p);
}

TEST_CASE("ppm write/read round trip is byte-stable") {
    Image img;
    img.width = 32;
    img.height = 32;
    img.rgb.resize(32 * 32 * 3);
    Rng rng(77);
    for (auto& v : img.rgb) v = 2.0f * rng.uniform_f() - 1.0f;

    auto p1 = temp_file("a.ppm");
    auto p2 = temp_file("b.ppm");
    write_ppm(p1.string(), img);
    Image back = read_ppm(p1.string());
    CHECK(back.width == 32);
    CHECK(back.height == 32);
    write_ppm(p2.string(), back);
    CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("ppm rejects malformed files") {
    auto p = temp_file("bad.ppm");
    {
        std::ofstream os(p, std::ios::binary);
        os << "P5\n2 2\n255\n";
    }
    CHECK_THROWS_AS((void)read_ppm(p.string()), io_error);
    {
        std::ofstream os(p, std::ios::binary);
        os << "P6\n2 2\n255\n";
        os.write("xx", 2);  // truncated payload
    }
    CHECK_THROWS_AS((void)read_ppm(p.string()), io_error);
}

TEST_CASE("mask ppm round trip") {
    std::vector<uint8_t> mask(32 * 32, 0);
    for (int i = 100; i < 200; ++i) mask[i] = 1;
    auto p = temp_file("mask.ppm");
    write_mask_ppm(p.string(), 32, 32, mask);
    auto back = read_mask_ppm(p.string(), 32, 32);
    CHECK(back == mask);
    CHECK_THROWS_AS((void)read_mask_ppm(p.string(), 16, 16), io_error);
}

TEST_CASE("checkpoint round trip preserves every tensor bit") {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.time_embed_dim = 8;
    Rng rng(123);
    auto params = init_params<float>(cfg, rng);
    auto path = temp_file("model.ckpt");
    save_checkpoint(path.string(), params);
    auto loaded = load_checkpoint(path.string());
    CHECK(loaded.cfg == cfg);
    auto a = params.named_params();
    auto b = loaded.named_params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(lore_test::bitwise_equal(*a[i].second, *b[i].second));
        CHECK(b[i].second->requires_grad() == false);
    }
}

TEST_CASE("checkpoint rejects corrupted header") {
    auto path = temp_file("corrupt.ckpt");
    {
        std::ofstream os(path, std::ios::binary);
        os << "LORX123456";
    }
    CHECK_THROWS_AS((void)load_checkpoint(path.string()), io_error);
}
