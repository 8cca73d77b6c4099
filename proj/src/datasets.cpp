#include "flowsr/datasets.hpp"

#include <algorithm>
#include <cmath>

#include "flowsr/checkpoint.hpp"
#include "flowsr/errors.hpp"
#include "flowsr/kvconfig.hpp"
#include "flowsr/rng.hpp"

namespace flowsr {

DatasetKind dataset_kind_from_string(const std::string& s) {
    if (s == "toy2d-gmm") return DatasetKind::Toy2dGmm;
    if (s == "tiny-textures") return DatasetKind::TinyTextures;
    throw ConfigError("unknown dataset kind '" + s + "'");
}

std::string to_string(DatasetKind k) {
    return k == DatasetKind::Toy2dGmm ? "toy2d-gmm" : "tiny-textures";
}

void DatasetSpec::validate() const {
    if (count < 1) {
        throw ConfigError("dataset: count must be >= 1");
    }
    if (kind == DatasetKind::Toy2dGmm) {
        if (components < 1) {
            throw ConfigError("dataset: components must be >= 1");
        }
        if (!(component_std > 0.0) || radius < 0.0) {
            throw ConfigError("dataset: component std must be > 0 and radius >= 0");
        }
    } else {
        if (side < 4) {
            throw ConfigError("dataset: texture side must be >= 4");
        }
        if (channels != 1) {
            throw ConfigError("dataset: tiny textures are single-channel");
        }
        if (blobs < 0 || sinusoids < 0) {
            throw ConfigError("dataset: blob/sinusoid counts must be >= 0");
        }
        if (scale < 1 || side % scale != 0) {
            throw ConfigError("dataset: texture side must be divisible by the SR scale");
        }
    }
}

Dataset gen_toy2d(const DatasetSpec& spec) {
    if (spec.kind != DatasetKind::Toy2dGmm) {
        throw UsageError("gen_toy2d: wrong dataset kind");
    }
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds;
    ds.spec = spec;
    ds.samples = Tensor::zeros({static_cast<std::size_t>(spec.count), 2});
    for (int i = 0; i < spec.count; ++i) {
        const std::uint64_t c = rng.uniform_index(static_cast<std::uint64_t>(spec.components));
        const double angle =
            2.0 * M_PI * static_cast<double>(c) / static_cast<double>(spec.components);
        const double cx = spec.radius * std::cos(angle);
        const double cy = spec.radius * std::sin(angle);
        ds.samples[2 * static_cast<std::size_t>(i)] = cx + spec.component_std * rng.normal();
        ds.samples[2 * static_cast<std::size_t>(i) + 1] = cy + spec.component_std * rng.normal();
    }
    return ds;
}

Dataset gen_tiny_textures(const DatasetSpec& spec) {
    if (spec.kind != DatasetKind::TinyTextures) {
        throw UsageError("gen_tiny_textures: wrong dataset kind");
    }
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t side = static_cast<std::size_t>(spec.side);
    Dataset ds;
    ds.spec = spec;
    ds.samples = Tensor::zeros({static_cast<std::size_t>(spec.count), 1, side, side});
    std::vector<double> img(side * side);
    const int max_wave = std::max(1, spec.side / 4);
    for (int n = 0; n < spec.count; ++n) {
        std::fill(img.begin(), img.end(), 0.0);
        for (int b = 0; b < spec.blobs; ++b) {
            const double cx = rng.uniform(0.0, static_cast<double>(side - 1));
            const double cy = rng.uniform(0.0, static_cast<double>(side - 1));
            const double s1 = rng.uniform(1.5, static_cast<double>(spec.side) / 4.0);
            const double s2 = rng.uniform(1.5, static_cast<double>(spec.side) / 4.0);
            const double theta = rng.uniform(0.0, M_PI);
            const double amp = rng.uniform(0.4, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
            const double ct = std::cos(theta), st = std::sin(theta);
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double u = ct * dx + st * dy;
                    const double v = -st * dx + ct * dy;
                    img[y * side + x] +=
                        amp * std::exp(-0.5 * (u * u / (s1 * s1) + v * v / (s2 * s2)));
                }
            }
        }
        for (int s = 0; s < spec.sinusoids; ++s) {
            // Integer wave numbers so the spectrum has an exact peak.
            const int kx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_wave))) + 1;
            const int ky = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(max_wave + 1)));
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const double amp = rng.uniform(0.2, 0.6);
            const double fx = 2.0 * M_PI * static_cast<double>(kx) / static_cast<double>(side);
            const double fy = 2.0 * M_PI * static_cast<double>(ky) / static_cast<double>(side);
            for (std::size_t y = 0; y < side; ++y) {
                for (std::size_t x = 0; x < side; ++x) {
                    img[y * side + x] +=
                        amp * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) +
                                       phase);
                }
            }
        }
        double* dst = ds.samples.data() + static_cast<std::size_t>(n) * side * side;
        for (std::size_t i = 0; i < side * side; ++i) {
            dst[i] = std::clamp(img[i], -1.0, 1.0);
        }
    }
    return ds;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    return spec.kind == DatasetKind::Toy2dGmm ? gen_toy2d(spec) : gen_tiny_textures(spec);
}

std::string dataset_spec_to_config(const DatasetSpec& spec) {
    KvDoc doc;
    doc.set("dataset", "kind", to_string(spec.kind));
    doc.set("dataset", "count", std::to_string(spec.count));
    doc.set("dataset", "seed", std::to_string(spec.seed));
    if (spec.kind == DatasetKind::Toy2dGmm) {
        doc.set("dataset", "components", std::to_string(spec.components));
        doc.set("dataset", "radius", format_double(spec.radius));
        doc.set("dataset", "component_std", format_double(spec.component_std));
    } else {
        doc.set("dataset", "side", std::to_string(spec.side));
        doc.set("dataset", "channels", std::to_string(spec.channels));
        doc.set("dataset", "blobs", std::to_string(spec.blobs));
        doc.set("dataset", "sinusoids", std::to_string(spec.sinusoids));
        doc.set("dataset", "scale", std::to_string(spec.scale));
    }
    return doc.dump();
}

DatasetSpec dataset_spec_from_config(const std::string& config_text) {
    const KvDoc doc = KvDoc::parse(config_text);
    DatasetSpec spec;
    spec.kind = dataset_kind_from_string(doc.get("dataset", "kind"));
    spec.count = static_cast<int>(doc.get_int("dataset", "count"));
    spec.seed = doc.get_u64_or("dataset", "seed", 0);
    if (spec.kind == DatasetKind::Toy2dGmm) {
        spec.components = static_cast<int>(doc.get_int("dataset", "components"));
        spec.radius = doc.get_double("dataset", "radius");
        spec.component_std = doc.get_double("dataset", "component_std");
    } else {
        spec.side = static_cast<int>(doc.get_int("dataset", "side"));
        spec.channels = static_cast<int>(doc.get_int("dataset", "channels"));
        spec.blobs = static_cast<int>(doc.get_int("dataset", "blobs"));
        spec.sinusoids = static_cast<int>(doc.get_int("dataset", "sinusoids"));
        spec.scale = static_cast<int>(doc.get_int("dataset", "scale"));
    }
    spec.validate();
    return spec;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    TensorArchive a;
    a.config_text = dataset_spec_to_config(ds.spec);
    a.records.emplace_back("data/samples", ds.samples);
    write_archive(a, path);
}

Dataset load_dataset(const std::string& path) {
    const TensorArchive a = read_archive(path);
    Dataset ds;
    ds.spec = dataset_spec_from_config(a.config_text);
    bool found = false;
    for (const auto& [name, t] : a.records) {
        if (name == "data/samples") {
            ds.samples = t;
            found = true;
        }
    }
    if (!found) {
        throw FormatError("dataset: missing data/samples record in '" + path + "'");
    }
    if (!ds.samples.all_finite()) {
        throw FormatError("dataset: non-finite samples in '" + path + "'");
    }
    if (ds.samples.shape().empty() ||
        ds.samples.shape()[0] != static_cast<std::size_t>(ds.spec.count)) {
        throw FormatError("dataset: sample count does not match spec in '" + path + "'");
    }
    return ds;
}

}  // namespace flowsr
