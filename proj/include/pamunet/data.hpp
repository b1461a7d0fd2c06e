#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pamunet/tensor.hpp"

namespace pamunet {

/// Malformed or missing data files.
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Raw 8-bit netpbm raster; pixels are interleaved for 3-channel images.
struct Raster {
    int channels = 1;
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const Raster&) const = default;
};

/// Binary P5 (1 channel) or P6 (3 channels), maxval 255.
Raster read_netpbm(const std::filesystem::path& path);
Raster decode_netpbm(std::string_view bytes, const std::string& origin = "<memory>");
void write_netpbm(const std::filesystem::path& path, const Raster& raster);
std::string encode_netpbm(const Raster& raster);

/// (C, H, W) tensor scaled to [0, 1].
TensorF read_image(const std::filesystem::path& path);
/// Values in [0, 1] are rounded to the nearest of 256 levels.
void write_image(const std::filesystem::path& path, const TensorF& image);
/// (1, H, W) tensor in {0, 1}; the file must hold only 0 and 255.
TensorF read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const TensorF& mask);

TensorF raster_to_tensor(const Raster& r);
Raster tensor_to_raster(const TensorF& t);

struct Sample {
    std::string id;
    TensorF image;  // (C, H, W)
    TensorF mask;   // (1, H, W)
};

enum class Split { train, val, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
    std::string id;
    std::string image;  // relative to the manifest directory
    std::string mask;
    Split split = Split::train;
};

/// Tab-separated `id image mask split` lines. An optional leading `# seed=<n>` line
/// records the generator seed.
struct Manifest {
    std::filesystem::path root;
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;

    static Manifest load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    std::vector<ManifestEntry> split(Split s) const;
    Sample load_sample(const ManifestEntry& entry) const;
    std::vector<Sample> load_split(Split s) const;
};

struct SynthOptions {
    std::uint64_t seed = 0;
    int count = 64;
    int size = 64;
    int max_blobs = 5;
    int channels = 1;
};

/// Noisy background with 1..max_blobs filled ellipses; the mask is the ellipse union.
/// The first floor(0.8 n) samples are train, half the rest (rounded down) val, the remainder test.
Sample synth_sample(const SynthOptions& opt, int index);
/// Writes images/, masks/ and manifest.tsv under `dir` and returns the manifest.
Manifest synth_generate(const std::filesystem::path& dir, const SynthOptions& opt);
/// Split tag of sample `index` out of `count`.
Split synth_split(int index, int count);

enum class Augment { identity, hflip, vflip, rot90, rot180, rot270 };
std::string_view augment_name(Augment a);
/// Applies the same transform to image and mask. Quarter turns are counterclockwise and need square input.
Sample augment(const Sample& s, Augment op);

/// Stacks samples into (N, C, H, W) images and (N, 1, H, W) masks.
void make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices, TensorF& images,
                TensorF& masks);

}  // namespace pamunet
