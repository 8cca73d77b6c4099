#pragma once

#include <cstdint>
#include <string>

#include "flowsr/tensor.hpp"

namespace flowsr {

enum class DatasetKind { Toy2dGmm, TinyTextures };
DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(DatasetKind k);

struct DatasetSpec {
    DatasetKind kind = DatasetKind::TinyTextures;
    int count = 256;
    std::uint64_t seed = 0;

    // toy2d-gmm: equal-weight isotropic components spaced on a circle.
    int components = 8;
    double radius = 0.7;
    double component_std = 0.08;

    // tiny-textures: side x side single-channel images in [-1,1], the sum of
    // `blobs` random anisotropic Gaussian bumps and `sinusoids` integer-
    // frequency plane waves, clipped.
    int side = 32;
    int channels = 1;
    int blobs = 3;
    int sinusoids = 1;
    int scale = 4;  // intended SR factor; side must be divisible by it

    void validate() const;
};

struct Dataset {
    DatasetSpec spec;
    Tensor samples;  // [count, 2] or [count, channels, side, side]
};

Dataset gen_toy2d(const DatasetSpec& spec);
Dataset gen_tiny_textures(const DatasetSpec& spec);
Dataset generate_dataset(const DatasetSpec& spec);

// Container round-trip (same binary format as checkpoints).
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

std::string dataset_spec_to_config(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_config(const std::string& config_text);

}  // namespace flowsr
