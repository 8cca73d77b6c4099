#include "flowsr/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "flowsr/errors.hpp"
#include "flowsr/kvconfig.hpp"

namespace flowsr {

namespace {

constexpr char kMagic[4] = {'O', 'F', 'T', 'S'};

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    // Build is little-endian x86; keep the byte order explicit anyway.
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) {
        throw FormatError("container: truncated file");
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void write_archive(const TensorArchive& archive, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw FormatError("container: cannot open '" + path + "' for writing");
    }
    os.write(kMagic, 4);
    write_le<std::uint16_t>(os, kArchiveVersion);
    write_le<std::uint64_t>(os, archive.config_text.size());
    os.write(archive.config_text.data(),
             static_cast<std::streamsize>(archive.config_text.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(archive.records.size()));
    for (const auto& [name, tensor] : archive.records) {
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.shape().size()));
        for (std::size_t d : tensor.shape()) {
            write_le<std::uint64_t>(os, d);
        }
        os.write(reinterpret_cast<const char*>(tensor.data()),
                 static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!os) {
        throw FormatError("container: write failed for '" + path + "'");
    }
}

TensorArchive read_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("container: cannot open '" + path + "'");
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("container: bad magic in '" + path + "'");
    }
    const auto version = read_le<std::uint16_t>(is);
    if (version != kArchiveVersion) {
        throw FormatError("container: unsupported version " + std::to_string(version));
    }
    const auto config_len = read_le<std::uint64_t>(is);
    TensorArchive a;
    a.config_text.resize(config_len);
    is.read(a.config_text.data(), static_cast<std::streamsize>(config_len));
    if (!is) {
        throw FormatError("container: truncated config block");
    }
    const auto n_records = read_le<std::uint32_t>(is);
    a.records.reserve(n_records);
    for (std::uint32_t r = 0; r < n_records; ++r) {
        const auto name_len = read_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) {
            throw FormatError("container: truncated record name");
        }
        const auto rank = read_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(read_le<std::uint64_t>(is));
        }
        const std::size_t n = shape_numel(shape);
        std::vector<double> data(n);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!is) {
            throw FormatError("container: truncated payload in record '" + name + "'");
        }
        a.records.emplace_back(std::move(name), Tensor::raw(std::move(shape), std::move(data)));
    }
    return a;
}

std::string arch_to_config(const ModelArch& arch) {
    KvDoc doc;
    std::ostringstream hidden;
    if (arch.kind == Backbone::Mlp) {
        doc.set("arch", "kind", "mlp");
        doc.set("arch", "data_dim", std::to_string(arch.data_dim));
        doc.set("arch", "cond_dim", std::to_string(arch.cond_dim));
        for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
            hidden << (i ? "," : "") << arch.hidden[i];
        }
        doc.set("arch", "hidden", hidden.str());
    } else {
        doc.set("arch", "kind", "conv");
        doc.set("arch", "height", std::to_string(arch.height));
        doc.set("arch", "width", std::to_string(arch.width));
        doc.set("arch", "channels", std::to_string(arch.channels));
        doc.set("arch", "cond_channels", std::to_string(arch.cond_channels));
        for (std::size_t i = 0; i < arch.conv_channels.size(); ++i) {
            hidden << (i ? "," : "") << arch.conv_channels[i];
        }
        doc.set("arch", "conv_channels", hidden.str());
    }
    doc.set("arch", "time_embed_dim", std::to_string(arch.time_embed_dim));
    return doc.dump();
}

ModelArch arch_from_config(const std::string& config_text) {
    const KvDoc doc = KvDoc::parse(config_text);
    ModelArch a;
    const std::string kind = doc.get("arch", "kind");
    a.time_embed_dim = static_cast<int>(doc.get_int("arch", "time_embed_dim"));
    if (kind == "mlp") {
        a.kind = Backbone::Mlp;
        a.data_dim = static_cast<int>(doc.get_int("arch", "data_dim"));
        a.cond_dim = static_cast<int>(doc.get_int("arch", "cond_dim"));
        a.hidden = parse_int_list(doc.get("arch", "hidden"));
    } else if (kind == "conv") {
        a.kind = Backbone::Conv;
        a.height = static_cast<int>(doc.get_int("arch", "height"));
        a.width = static_cast<int>(doc.get_int("arch", "width"));
        a.channels = static_cast<int>(doc.get_int("arch", "channels"));
        a.cond_channels = static_cast<int>(doc.get_int("arch", "cond_channels"));
        a.conv_channels = parse_int_list(doc.get("arch", "conv_channels"));
    } else {
        throw FormatError("checkpoint: unknown arch kind '" + kind + "'");
    }
    a.validate();
    return a;
}

void save_checkpoint(const VelocityModel& model, const std::string& path,
                     const std::string& extra_config) {
    TensorArchive a;
    a.config_text = arch_to_config(model.arch);
    if (!extra_config.empty()) {
        a.config_text += extra_config;
        if (a.config_text.back() != '\n') {
            a.config_text += '\n';
        }
    }
    for (const auto& [name, t] : model.params) {
        a.records.emplace_back("params/" + name, t);
    }
    for (const auto& [name, t] : model.ema) {
        a.records.emplace_back("ema/" + name, t);
    }
    write_archive(a, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const TensorArchive a = read_archive(path);
    LoadedCheckpoint out;
    out.config_text = a.config_text;
    out.model.arch = arch_from_config(a.config_text);
    for (const auto& [name, t] : a.records) {
        if (name.rfind("params/", 0) == 0) {
            out.model.params[name.substr(7)] = t;
        } else if (name.rfind("ema/", 0) == 0) {
            out.model.ema[name.substr(4)] = t;
        } else {
            throw FormatError("checkpoint: unexpected record '" + name + "'");
        }
    }
    // Shape table check: a freshly initialized model of the same architecture
    // defines the expected parameter names and shapes.
    const VelocityModel reference = init_velocity_model(out.model.arch, 0);
    if (!same_shapes(reference.params, out.model.params) ||
        !same_shapes(reference.ema, out.model.ema)) {
        throw FormatError("checkpoint: parameter table does not match architecture");
    }
    return out;
}

}  // namespace flowsr
