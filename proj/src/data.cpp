#include "pamunet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "pamunet/random.hpp"

namespace pamunet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- netpbm

namespace {

class HeaderReader {
   public:
    HeaderReader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

    int number(const char* what) {
        skip_space();
        if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            throw DataError(origin_ + ": malformed netpbm header (expected " + what + ")");
        }
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            v = v * 10 + (bytes_[pos_++] - '0');
            if (v > 1'000'000) throw DataError(origin_ + ": netpbm " + what + " too large");
        }
        return static_cast<int>(v);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw DataError(origin_ + ": malformed netpbm header");
        }
        return pos_ + 1;
    }

   private:
    void skip_space() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view bytes_;
    const std::string& origin_;
    std::size_t pos_ = 2;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void dump(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

Raster decode_netpbm(std::string_view bytes, const std::string& origin) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw DataError(origin + ": bad magic number (expected P5 or P6)");
    }
    Raster r;
    r.channels = bytes[1] == '5' ? 1 : 3;
    HeaderReader h(bytes, origin);
    r.width = h.number("width");
    r.height = h.number("height");
    const int maxval = h.number("maxval");
    if (maxval != 255) throw DataError(origin + ": maxval " + std::to_string(maxval) + " unsupported (need 255)");
    if (r.width < 1 || r.height < 1) throw DataError(origin + ": empty image");
    const std::size_t start = h.raster_start();
    const std::size_t need = static_cast<std::size_t>(r.channels) * r.width * r.height;
    if (bytes.size() < start + need) {
        throw DataError(origin + ": truncated payload (" + std::to_string(bytes.size() - std::min(start, bytes.size())) +
                        " of " + std::to_string(need) + " bytes)");
    }
    r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + need));
    return r;
}

Raster read_netpbm(const fs::path& path) { return decode_netpbm(slurp(path), path.string()); }

std::string encode_netpbm(const Raster& r) {
    if (r.channels != 1 && r.channels != 3) throw DataError("netpbm supports 1 or 3 channels");
    if (r.pixels.size() != static_cast<std::size_t>(r.channels) * r.width * r.height) {
        throw DataError("raster size does not match its dimensions");
    }
    std::string out = (r.channels == 1 ? "P5\n" : "P6\n") + std::to_string(r.width) + " " +
                      std::to_string(r.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
    return out;
}

void write_netpbm(const fs::path& path, const Raster& r) { dump(path, encode_netpbm(r)); }

TensorF raster_to_tensor(const Raster& r) {
    std::vector<float> v(r.pixels.size());
    const std::size_t plane = static_cast<std::size_t>(r.height) * r.width;
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < r.channels; ++c) {
            v[static_cast<std::size_t>(c) * plane + p] = static_cast<float>(r.pixels[p * r.channels + c]) / 255.0f;
        }
    }
    return TensorF({r.channels, r.height, r.width}, std::move(v));
}

Raster tensor_to_raster(const TensorF& t) {
    if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
        throw DataError("image tensor must be (1 or 3, H, W), got " + to_string(t.shape()));
    }
    Raster r{t.dim(0), t.dim(1), t.dim(2), {}};
    const std::size_t plane = static_cast<std::size_t>(r.height) * r.width;
    r.pixels.resize(t.size());
    const auto d = t.data();
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < r.channels; ++c) {
            const float v = std::clamp(d[static_cast<std::size_t>(c) * plane + p], 0.0f, 1.0f);
            r.pixels[p * r.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    return r;
}

TensorF read_image(const fs::path& path) { return raster_to_tensor(read_netpbm(path)); }

void write_image(const fs::path& path, const TensorF& image) { write_netpbm(path, tensor_to_raster(image)); }

TensorF read_mask(const fs::path& path) {
    Raster r = read_netpbm(path);
    if (r.channels != 1) throw DataError(path.string() + ": mask must be a P5 image");
    for (std::uint8_t p : r.pixels) {
        if (p != 0 && p != 255) throw DataError(path.string() + ": mask not binary (value " + std::to_string(p) + ")");
    }
    return raster_to_tensor(r);
}

void write_mask(const fs::path& path, const TensorF& mask) {
    for (float v : mask.data()) {
        if (v != 0.0f && v != 1.0f) throw DataError(path.string() + ": mask not binary");
    }
    write_netpbm(path, tensor_to_raster(mask));
}

// ---------------------------------------------------------------- manifest

std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw DataError("unknown split '" + std::string(name) + "'");
}

Manifest Manifest::load(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open manifest " + file.string());
    Manifest m;
    m.root = file.parent_path();
    std::unordered_set<std::string> ids;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("# seed=", 0) == 0) {
            m.seed = std::stoull(line.substr(7));
            continue;
        }
        if (line[0] == '#') continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
            cols.push_back(line.substr(start, tab - start));
        }
        cols.push_back(line.substr(start));
        const std::string where = file.string() + ":" + std::to_string(lineno);
        if (cols.size() != 4) throw DataError(where + ": expected 4 tab-separated columns");
        if (!ids.insert(cols[0]).second) throw DataError(where + ": duplicate id '" + cols[0] + "'");
        ManifestEntry e{cols[0], cols[1], cols[2], Split::train};
        try {
            e.split = parse_split(cols[3]);
        } catch (const DataError& err) {
            throw DataError(where + ": " + err.what());
        }
        for (const std::string& p : {e.image, e.mask}) {
            if (!fs::exists(m.root / p)) throw DataError(where + ": missing file " + (m.root / p).string());
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void Manifest::save(const fs::path& file) const {
    std::string out = "# seed=" + std::to_string(seed) + "\n";
    for (const ManifestEntry& e : entries) {
        out += e.id + "\t" + e.image + "\t" + e.mask + "\t" + std::string(split_name(e.split)) + "\n";
    }
    dump(file, out);
}

std::vector<ManifestEntry> Manifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const ManifestEntry& e : entries) {
        if (e.split == s) out.push_back(e);
    }
    return out;
}

Sample Manifest::load_sample(const ManifestEntry& e) const {
    Sample s{e.id, read_image(root / e.image), read_mask(root / e.mask)};
    if (s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2)) {
        throw DataError(e.id + ": image and mask sizes differ");
    }
    return s;
}

std::vector<Sample> Manifest::load_split(Split s) const {
    std::vector<Sample> out;
    for (const ManifestEntry& e : split(s)) out.push_back(load_sample(e));
    return out;
}

// ---------------------------------------------------------------- synthetic data

Split synth_split(int index, int count) {
    const int train = (count * 8) / 10;
    const int val = (count - train) / 2;
    if (index < train) return Split::train;
    if (index < train + val) return Split::val;
    return Split::test;
}

Sample synth_sample(const SynthOptions& opt, int index) {
    if (opt.size < 16 || opt.size % 16 != 0) {
        throw std::invalid_argument("synthetic size must be a positive multiple of 16, got " + std::to_string(opt.size));
    }
    if (opt.max_blobs < 1) throw std::invalid_argument("max_blobs must be >= 1");
    if (opt.channels != 1 && opt.channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    Rng rng(opt.seed, static_cast<std::uint64_t>(index));
    const int n = opt.size;
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    std::vector<std::uint8_t> label(plane, 0);
    std::vector<int> level(plane);

    const int background = rng.range(30, 90);
    for (int& v : level) v = background;
    const int blobs = rng.range(1, opt.max_blobs);
    const int min_axis = std::max(1, n / 16);
    const int max_axis = std::max(min_axis, n / 5);
    for (int b = 0; b < blobs; ++b) {
        const int a = rng.range(min_axis, max_axis);
        const int c = rng.range(min_axis, max_axis);
        const int cx = rng.range(a, n - 1 - a);
        const int cy = rng.range(c, n - 1 - c);
        const int fill = rng.range(140, 210);
        const long a2 = static_cast<long>(a) * a, c2 = static_cast<long>(c) * c;
        for (int y = cy - c; y <= cy + c; ++y) {
            for (int x = cx - a; x <= cx + a; ++x) {
                const long dx = x - cx, dy = y - cy;
                if (dx * dx * c2 + dy * dy * a2 <= a2 * c2) {
                    const std::size_t p = static_cast<std::size_t>(y) * n + x;
                    label[p] = 1;
                    level[p] = fill;
                }
            }
        }
    }

    std::vector<float> image(plane * opt.channels);
    static constexpr int tint[3] = {0, -25, -45};
    for (int ch = 0; ch < opt.channels; ++ch) {
        const int shift = opt.channels == 3 ? tint[ch] : 0;
        for (std::size_t p = 0; p < plane; ++p) {
            const int noise = rng.range(-25, 25);
            const int v = std::clamp(level[p] + shift + noise, 0, 255);
            image[static_cast<std::size_t>(ch) * plane + p] = static_cast<float>(v) / 255.0f;
        }
    }
    std::vector<float> mask(label.begin(), label.end());
    char id[32];
    std::snprintf(id, sizeof id, "s%04d", index);
    return {id, TensorF({opt.channels, n, n}, std::move(image)), TensorF({1, n, n}, std::move(mask))};
}

Manifest synth_generate(const fs::path& dir, const SynthOptions& opt) {
    if (opt.count < 1) throw std::invalid_argument("count must be >= 1");
    Manifest m;
    m.root = dir;
    m.seed = opt.seed;
    const std::string ext = opt.channels == 3 ? ".ppm" : ".pgm";
    for (int i = 0; i < opt.count; ++i) {
        Sample s = synth_sample(opt, i);
        ManifestEntry e{s.id, "images/" + s.id + ext, "masks/" + s.id + ".pgm", synth_split(i, opt.count)};
        write_image(dir / e.image, s.image);
        write_mask(dir / e.mask, s.mask);
        m.entries.push_back(std::move(e));
    }
    m.save(dir / "manifest.tsv");
    return m;
}

// ---------------------------------------------------------------- augmentation

std::string_view augment_name(Augment a) {
    switch (a) {
        case Augment::identity: return "identity";
        case Augment::hflip: return "hflip";
        case Augment::vflip: return "vflip";
        case Augment::rot90: return "rot90";
        case Augment::rot180: return "rot180";
        case Augment::rot270: return "rot270";
    }
    return "?";
}

namespace {

TensorF transform(const TensorF& t, Augment op) {
    const int ch = t.dim(0), h = t.dim(1), w = t.dim(2);
    const bool quarter = op == Augment::rot90 || op == Augment::rot270;
    if (quarter && h != w) throw std::invalid_argument("quarter rotations need square input, got " + to_string(t.shape()));
    std::vector<float> out(t.size());
    const auto in = t.data();
    for (int c = 0; c < ch; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int sy = y, sx = x;
                switch (op) {
                    case Augment::identity: break;
                    case Augment::hflip: sx = w - 1 - x; break;
                    case Augment::vflip: sy = h - 1 - y; break;
                    case Augment::rot90: sy = x; sx = w - 1 - y; break;
                    case Augment::rot180: sy = h - 1 - y; sx = w - 1 - x; break;
                    case Augment::rot270: sy = h - 1 - x; sx = y; break;
                }
                out[base + static_cast<std::size_t>(y) * w + x] = in[base + static_cast<std::size_t>(sy) * w + sx];
            }
        }
    }
    return TensorF(t.shape(), std::move(out));
}

}  // namespace

Sample augment(const Sample& s, Augment op) { return {s.id, transform(s.image, op), transform(s.mask, op)}; }

void make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, TensorF& images,
                TensorF& masks) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const Shape is = samples.at(indices[0]).image.shape();
    const Shape ms = samples.at(indices[0]).mask.shape();
    const int n = static_cast<int>(indices.size());
    std::vector<float> iv, mv;
    iv.reserve(numel(is) * n);
    mv.reserve(numel(ms) * n);
    for (std::size_t i : indices) {
        const Sample& s = samples.at(i);
        if (s.image.shape() != is || s.mask.shape() != ms) throw DataError("make_batch: samples differ in shape");
        iv.insert(iv.end(), s.image.data().begin(), s.image.data().end());
        mv.insert(mv.end(), s.mask.data().begin(), s.mask.data().end());
    }
    images = TensorF({n, is[0], is[1], is[2]}, std::move(iv));
    masks = TensorF({n, ms[0], ms[1], ms[2]}, std::move(mv));
}

}  // namespace pamunet
