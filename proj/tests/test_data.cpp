#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>

#include <unistd.h>

#include "pamunet/data.hpp"
#include "pamunet/random.hpp"

using namespace pamunet;
namespace fs = std::filesystem;

namespace {

/// Fresh directory removed on scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("pamunet_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out << bytes;
}

Raster random_raster(int channels, int h, int w, std::uint64_t seed) {
    Raster r{channels, h, w, {}};
    Rng rng(seed);
    r.pixels.resize(static_cast<std::size_t>(channels) * h * w);
    for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    return r;
}

/// 8-connected foreground components of a (1, H, W) mask.
int components(const TensorF& mask) {
    const int h = mask.dim(1), w = mask.dim(2);
    std::vector<int> label(static_cast<std::size_t>(h) * w, 0);
    int count = 0;
    for (int start = 0; start < h * w; ++start) {
        if (mask.data()[start] == 0.0f || label[start] != 0) continue;
        ++count;
        std::queue<int> q;
        q.push(start);
        label[start] = count;
        while (!q.empty()) {
            const int p = q.front();
            q.pop();
            const int y = p / w, x = p % w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
                    const int n = ny * w + nx;
                    if (mask.data()[n] != 0.0f && label[n] == 0) {
                        label[n] = count;
                        q.push(n);
                    }
                }
        }
    }
    return count;
}

float foreground(const TensorF& mask) {
    float s = 0;
    for (float v : mask.data()) s += v;
    return s;
}

bool same(const Sample& a, const Sample& b) {
    return std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin()) &&
           std::equal(a.mask.data().begin(), a.mask.data().end(), b.mask.data().begin()) &&
           a.image.shape() == b.image.shape();
}

}  // namespace

TEST_CASE("netpbm decoding") {
    const std::string zeros = "P5\n8 8\n255\n" + std::string(64, '\0');
    const Raster r = decode_netpbm(zeros);
    CHECK(r.channels == 1);
    CHECK(r.height == 8);
    CHECK(r.width == 8);
    TensorF t = raster_to_tensor(r);
    CHECK(t.shape() == Shape{1, 8, 8});
    for (float v : t.data()) CHECK(v == 0.0f);

    CHECK(decode_netpbm("P6 2 1 255\n" + std::string(6, '\x10')).channels == 3);
    CHECK_THROWS_AS(decode_netpbm("P2\n2 2\n255\n1 2 3 4"), DataError);
    CHECK_THROWS_AS(decode_netpbm("P5\n2 2\n65535\n" + std::string(8, '\0')), DataError);
    CHECK_THROWS_AS(decode_netpbm("P5\n2 2\n100\n" + std::string(4, '\0')), DataError);
    CHECK_THROWS_AS(decode_netpbm("P5\n4 4\n255\n" + std::string(10, '\0')), DataError);
    CHECK_THROWS_AS(decode_netpbm("P5\n4"), DataError);
}

TEST_CASE("netpbm byte round trip") {
    TempDir dir("netpbm");
    for (int channels : {1, 3}) {
        const Raster r = random_raster(channels, 7, 5, static_cast<std::uint64_t>(channels));
        const fs::path p = dir.path / ("img" + std::to_string(channels) + ".pnm");
        write_netpbm(p, r);
        const std::string bytes = slurp(p);
        CHECK(bytes == encode_netpbm(r));
        const Raster back = read_netpbm(p);
        CHECK(back == r);
        write_netpbm(dir.path / "again.pnm", back);
        CHECK(slurp(dir.path / "again.pnm") == bytes);
        // Through the float tensor as well.
        write_image(dir.path / "tensor.pnm", read_image(p));
        CHECK(slurp(dir.path / "tensor.pnm") == bytes);
    }
    CHECK_THROWS_AS(read_netpbm(dir.path / "missing.pgm"), DataError);
}

TEST_CASE("mask validation") {
    TempDir dir("mask");
    Raster r{1, 2, 2, {0, 255, 1, 0}};
    write_netpbm(dir.path / "gray.pgm", r);
    try {
        read_mask(dir.path / "gray.pgm");
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("mask not binary") != std::string::npos);
    }
    r.pixels = {0, 255, 255, 0};
    write_netpbm(dir.path / "ok.pgm", r);
    TensorF m = read_mask(dir.path / "ok.pgm");
    CHECK(std::vector<float>(m.data().begin(), m.data().end()) == std::vector<float>{0, 1, 1, 0});
    write_mask(dir.path / "ok2.pgm", m);
    CHECK(slurp(dir.path / "ok2.pgm") == slurp(dir.path / "ok.pgm"));
    CHECK_THROWS_AS(write_mask(dir.path / "bad.pgm", TensorF({1, 1, 2}, {0.0f, 0.5f})), DataError);
    write_netpbm(dir.path / "rgb.ppm", random_raster(3, 2, 2, 1));
    CHECK_THROWS_AS(read_mask(dir.path / "rgb.ppm"), DataError);
}

TEST_CASE("synthetic samples") {
    SynthOptions opt;
    opt.seed = 4;
    opt.size = 32;
    for (int i = 0; i < 10; ++i) {
        const Sample s = synth_sample(opt, i);
        CHECK(s.image.shape() == Shape{1, 32, 32});
        CHECK(s.mask.shape() == Shape{1, 32, 32});
        for (float v : s.image.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (float v : s.mask.data()) CHECK((v == 0.0f || v == 1.0f));
        CHECK(foreground(s.mask) > 0.0f);
        CHECK(same(s, synth_sample(opt, i)));
    }
    CHECK_FALSE(same(synth_sample(opt, 0), synth_sample(opt, 1)));
    opt.channels = 3;
    CHECK(synth_sample(opt, 0).image.shape() == Shape{3, 32, 32});
    opt.size = 30;
    CHECK_THROWS(synth_sample(opt, 0));
}

TEST_CASE("a single blob is one connected component") {
    SynthOptions opt;
    opt.seed = 11;
    opt.size = 48;
    opt.max_blobs = 1;
    for (int i = 0; i < 40; ++i) CHECK(components(synth_sample(opt, i).mask) == 1);
}

TEST_CASE("split arithmetic") {
    int train = 0, val = 0, test = 0;
    for (int i = 0; i < 10; ++i) {
        switch (synth_split(i, 10)) {
            case Split::train: ++train; break;
            case Split::val: ++val; break;
            case Split::test: ++test; break;
        }
    }
    CHECK(train == 8);
    CHECK(val == 1);
    CHECK(test == 1);
    CHECK(parse_split(split_name(Split::val)) == Split::val);
    CHECK_THROWS_AS(parse_split("holdout"), DataError);
}

TEST_CASE("generated datasets are seed-pure") {
    TempDir a("gen_a"), b("gen_b"), c("gen_c");
    SynthOptions opt;
    opt.seed = 3;
    opt.count = 10;
    opt.size = 16;
    const Manifest ma = synth_generate(a.path, opt);
    synth_generate(b.path, opt);
    opt.seed = 4;
    synth_generate(c.path, opt);
    CHECK(ma.entries.size() == 10);
    CHECK(ma.split(Split::train).size() == 8);
    CHECK(ma.split(Split::val).size() == 1);
    CHECK(ma.split(Split::test).size() == 1);
    bool differs = false;
    for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a.path);
        CHECK(slurp(entry.path()) == slurp(b.path / rel));
        if (rel.filename() != "manifest.tsv" && slurp(entry.path()) != slurp(c.path / rel)) differs = true;
    }
    CHECK(differs);

    const Manifest loaded = Manifest::load(a.path / "manifest.tsv");
    CHECK(loaded.seed == 3);
    REQUIRE(loaded.entries.size() == 10);
    CHECK(loaded.entries[3].id == ma.entries[3].id);
    const Sample s = loaded.load_sample(loaded.entries[3]);
    opt.seed = 3;
    const Sample expect = synth_sample(opt, 3);
    CHECK(std::equal(s.mask.data().begin(), s.mask.data().end(), expect.mask.data().begin()));
    CHECK(loaded.load_split(Split::test).size() == 1);
}

TEST_CASE("manifest validation") {
    TempDir dir("manifest");
    write_netpbm(dir.path / "a.pgm", random_raster(1, 4, 4, 1));
    write_netpbm(dir.path / "m.pgm", Raster{1, 4, 4, std::vector<std::uint8_t>(16, 0)});
    spit(dir.path / "ok.tsv", "# seed=9\na\ta.pgm\tm.pgm\ttrain\n");
    const Manifest m = Manifest::load(dir.path / "ok.tsv");
    CHECK(m.seed == 9);
    CHECK(m.entries.size() == 1);
    m.save(dir.path / "saved.tsv");
    CHECK(slurp(dir.path / "saved.tsv") == slurp(dir.path / "ok.tsv"));

    spit(dir.path / "dup.tsv", "a\ta.pgm\tm.pgm\ttrain\na\ta.pgm\tm.pgm\ttest\n");
    CHECK_THROWS_AS(Manifest::load(dir.path / "dup.tsv"), DataError);
    spit(dir.path / "missing.tsv", "a\ta.pgm\tnope.pgm\ttrain\n");
    CHECK_THROWS_AS(Manifest::load(dir.path / "missing.tsv"), DataError);
    spit(dir.path / "cols.tsv", "a\ta.pgm\ttrain\n");
    CHECK_THROWS_AS(Manifest::load(dir.path / "cols.tsv"), DataError);
    spit(dir.path / "split.tsv", "a\ta.pgm\tm.pgm\tholdout\n");
    CHECK_THROWS_AS(Manifest::load(dir.path / "split.tsv"), DataError);
    CHECK_THROWS_AS(Manifest::load(dir.path / "absent.tsv"), DataError);
}

TEST_CASE("augmentation group laws") {
    SynthOptions opt;
    opt.seed = 8;
    opt.size = 16;
    opt.channels = 3;
    const Sample s = synth_sample(opt, 0);
    auto apply = [](Sample x, std::initializer_list<Augment> ops) {
        for (Augment a : ops) x = augment(x, a);
        return x;
    };
    CHECK(same(apply(s, {Augment::hflip, Augment::hflip}), s));
    CHECK(same(apply(s, {Augment::vflip, Augment::vflip}), s));
    CHECK(same(apply(s, {Augment::rot180, Augment::rot180}), s));
    CHECK(same(apply(s, {Augment::rot90, Augment::rot90, Augment::rot90, Augment::rot90}), s));
    CHECK(same(apply(s, {Augment::rot90, Augment::rot270}), s));
    CHECK(same(apply(s, {Augment::rot90, Augment::rot90}), augment(s, Augment::rot180)));
    CHECK(same(apply(s, {Augment::hflip, Augment::vflip}), augment(s, Augment::rot180)));
    CHECK(same(augment(s, Augment::identity), s));
    for (Augment a : {Augment::hflip, Augment::vflip, Augment::rot90, Augment::rot180, Augment::rot270}) {
        const Sample t = augment(s, a);
        CHECK(foreground(t.mask) == foreground(s.mask));
        for (float v : t.mask.data()) CHECK((v == 0.0f || v == 1.0f));
    }

    // Counterclockwise quarter turn: out(y, x) = in(x, W - 1 - y).
    const Sample r = augment(s, Augment::rot90);
    CHECK(r.image.at({1, 2, 5}) == s.image.at({1, 5, 15 - 2}));

    Sample wide{"w", TensorF::zeros({1, 4, 8}), TensorF::zeros({1, 4, 8})};
    CHECK_THROWS(augment(wide, Augment::rot90));
    CHECK(augment(wide, Augment::hflip).image.shape() == Shape{1, 4, 8});
}

TEST_CASE("batching") {
    SynthOptions opt;
    opt.size = 16;
    std::vector<Sample> samples{synth_sample(opt, 0), synth_sample(opt, 1), synth_sample(opt, 2)};
    TensorF images, masks;
    make_batch(samples, {2, 0}, images, masks);
    CHECK(images.shape() == Shape{2, 1, 16, 16});
    CHECK(masks.shape() == Shape{2, 1, 16, 16});
    CHECK(images.data()[0] == samples[2].image.data()[0]);
    CHECK(images.data()[256] == samples[0].image.data()[0]);
    CHECK_THROWS(make_batch(samples, {}, images, masks));
}
