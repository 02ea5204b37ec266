#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tabrec/checkpoint.hpp"
#include "tabrec/rng.hpp"

using namespace tabrec;

namespace {
std::string read_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("checkpoint round-trips tensors bit-exactly") {
    Rng rng(5);
    Checkpoint ckpt;
    ckpt.meta = {{"step", 42}, {"config", {{"width", 128}, {"layers", 2}}}};
    Tensor a = randn({3, 4}, 1.0f, rng, false);
    Tensor b = randn({2, 2, 5}, 0.3f, rng, false);
    ckpt.add("enc.w", a);
    ckpt.add("dec.b", b);

    const std::string path = (std::filesystem::temp_directory_path() / "tabrec_ckpt_test.bin").string();
    save_checkpoint(ckpt, path);
    Checkpoint back = load_checkpoint(path);

    CHECK(back.meta["step"] == 42);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "enc.w");
    CHECK(back.tensors[1].first == "dec.b");
    CHECK(back.find("enc.w")->values() == a.values());
    CHECK(back.find("dec.b")->values() == b.values());
    CHECK(back.find("dec.b")->shape() == b.shape());
    CHECK(back.find("missing") == nullptr);

    // Re-saving the loaded checkpoint reproduces the file byte for byte.
    const std::string path2 = path + ".2";
    save_checkpoint(back, path2);
    CHECK(read_bytes(path) == read_bytes(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("loading a non-checkpoint file fails cleanly") {
    const std::string path = (std::filesystem::temp_directory_path() / "tabrec_not_ckpt.bin").string();
    std::ofstream(path) << "definitely not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
}
