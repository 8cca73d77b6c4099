#include "flowsr/run_config.hpp"

#include <filesystem>
#include <set>

#include "flowsr/errors.hpp"
#include "flowsr/kvconfig.hpp"

namespace flowsr {

namespace {

DatasetSpec parse_dataset_section(const KvDoc& doc) {
    DatasetSpec spec;
    spec.kind = dataset_kind_from_string(doc.get("dataset", "kind"));
    spec.count = static_cast<int>(doc.get_int("dataset", "count"));
    spec.seed = doc.get_u64_or("dataset", "seed", 0);
    if (spec.kind == DatasetKind::Toy2dGmm) {
        spec.components = static_cast<int>(doc.get_int_or("dataset", "components", 8));
        spec.radius = doc.get_double_or("dataset", "radius", 0.7);
        spec.component_std = doc.get_double_or("dataset", "component_std", 0.08);
    } else {
        spec.side = static_cast<int>(doc.get_int_or("dataset", "side", 32));
        spec.channels = static_cast<int>(doc.get_int_or("dataset", "channels", 1));
        spec.blobs = static_cast<int>(doc.get_int_or("dataset", "blobs", 3));
        spec.sinusoids = static_cast<int>(doc.get_int_or("dataset", "sinusoids", 1));
        spec.scale = static_cast<int>(doc.get_int_or("dataset", "scale", 4));
    }
    spec.validate();
    return spec;
}

TimeRange parse_time_range(const KvDoc& doc, const std::string& section) {
    TimeRange r;
    r.t_min = doc.get_double_or(section, "t_min", 0.01);
    r.t_max = doc.get_double_or(section, "t_max", 0.99);
    return r;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
    const KvDoc doc = KvDoc::parse_file(path);
    doc.require_known_sections(
        {"run", "dataset", "degradation", "model", "teacher", "distill", "output"});
    doc.require_known_keys("run", {"stage", "log_every"});
    doc.require_known_keys("dataset",
                           {"file", "kind", "count", "seed", "components", "radius",
                            "component_std", "side", "channels", "blobs", "sinusoids", "scale"});
    doc.require_known_keys("degradation", {"scale", "sigma_n"});
    doc.require_known_keys("model",
                           {"kind", "condition", "time_embed_dim", "hidden", "conv_channels"});
    doc.require_known_keys("teacher", {"sigma_p", "discrepancy", "t_min", "t_max", "batch",
                                       "iterations", "lr", "warmup", "ema", "seed"});
    doc.require_known_keys("distill",
                           {"teacher", "dt", "lambda_align", "lambda_bc", "variant", "slope",
                            "t_min", "t_max", "batch", "iterations", "lr", "warmup", "ema",
                            "seed", "sigma_p"});
    doc.require_known_keys("output", {"dir", "name"});

    RunConfig cfg;
    cfg.stage = doc.get("run", "stage");
    if (cfg.stage != "teacher" && cfg.stage != "distill") {
        throw ConfigError("run: stage must be 'teacher' or 'distill'");
    }
    cfg.log_every = static_cast<int>(doc.get_int_or("run", "log_every", 0));

    if (doc.has("dataset", "file")) {
        cfg.dataset_file = doc.get("dataset", "file");
        if (!std::filesystem::exists(cfg.dataset_file)) {
            throw ConfigError("dataset: file '" + cfg.dataset_file + "' does not exist");
        }
    } else {
        cfg.dataset = parse_dataset_section(doc);
    }

    cfg.degradation.scale = static_cast<int>(doc.get_int_or("degradation", "scale", 4));
    cfg.degradation.sigma_n = doc.get_double_or("degradation", "sigma_n", 0.0);
    cfg.degradation.validate();

    if (doc.has_section("model")) {
        cfg.model_kind = doc.get_or("model", "kind", "auto");
        cfg.conditioned = doc.get_or("model", "condition", "true") == "true";
        cfg.time_embed_dim = static_cast<int>(doc.get_int_or("model", "time_embed_dim", 8));
        if (doc.has("model", "hidden")) {
            cfg.hidden = parse_int_list(doc.get("model", "hidden"));
        }
        if (doc.has("model", "conv_channels")) {
            cfg.conv_channels = parse_int_list(doc.get("model", "conv_channels"));
        }
    }

    if (cfg.stage == "teacher") {
        cfg.flow.sigma_p = doc.get_double_or("teacher", "sigma_p", 0.1);
        cfg.flow.discrepancy =
            discrepancy_from_string(doc.get_or("teacher", "discrepancy", "l1"));
        cfg.flow.t_range = parse_time_range(doc, "teacher");
        cfg.flow.batch = static_cast<int>(doc.get_int_or("teacher", "batch", 32));
        cfg.flow.iterations = static_cast<int>(doc.get_int_or("teacher", "iterations", 1000));
        cfg.flow.lr = doc.get_double_or("teacher", "lr", 1e-4);
        cfg.flow.warmup = static_cast<int>(doc.get_int_or("teacher", "warmup", 1000));
        cfg.flow.ema_ratio = doc.get_double_or("teacher", "ema", 0.9999);
        cfg.flow.seed = doc.get_u64_or("teacher", "seed", 0);
        cfg.flow.validate();
    } else {
        cfg.teacher_checkpoint = doc.get("distill", "teacher");
        if (!std::filesystem::exists(cfg.teacher_checkpoint)) {
            throw ConfigError("distill: teacher checkpoint '" + cfg.teacher_checkpoint +
                              "' does not exist");
        }
        cfg.distill.dt = doc.get_double_or("distill", "dt", 0.05);
        cfg.distill.lambda_align = doc.get_double_or("distill", "lambda_align", 0.01);
        cfg.distill.lambda_bc = doc.get_double_or("distill", "lambda_bc", 0.1);
        cfg.distill.variant =
            distill_variant_from_string(doc.get_or("distill", "variant", "trajectory"));
        cfg.distill.slope_kind = solver_kind_from_string(doc.get_or("distill", "slope", "midpoint"));
        cfg.distill.t_range = parse_time_range(doc, "distill");
        cfg.distill.batch = static_cast<int>(doc.get_int_or("distill", "batch", 8));
        cfg.distill.iterations = static_cast<int>(doc.get_int_or("distill", "iterations", 1000));
        cfg.distill.lr = doc.get_double_or("distill", "lr", 1e-4);
        cfg.distill.warmup = static_cast<int>(doc.get_int_or("distill", "warmup", 1000));
        cfg.distill.ema_ratio = doc.get_double_or("distill", "ema", 0.9999);
        cfg.distill.seed = doc.get_u64_or("distill", "seed", 0);
        cfg.distill_sigma_p = doc.get_double_or("distill", "sigma_p", -1.0);
        cfg.distill.validate();
    }

    cfg.out_dir = doc.get_or("output", "dir", ".");
    cfg.name = doc.get_or("output", "name", cfg.stage);
    return cfg;
}

ModelArch resolve_arch(const RunConfig& cfg, const DatasetSpec& data_spec) {
    ModelArch arch;
    arch.time_embed_dim = cfg.time_embed_dim;
    const bool image = data_spec.kind == DatasetKind::TinyTextures;
    const std::string kind = cfg.model_kind == "auto" ? (image ? "conv" : "mlp") : cfg.model_kind;
    if (kind == "conv") {
        if (!image) {
            throw ConfigError("model: conv backbone needs an image dataset");
        }
        arch.kind = Backbone::Conv;
        arch.height = data_spec.side;
        arch.width = data_spec.side;
        arch.channels = data_spec.channels;
        arch.cond_channels = cfg.conditioned ? data_spec.channels : 0;
        arch.conv_channels = cfg.conv_channels;
    } else if (kind == "mlp") {
        arch.kind = Backbone::Mlp;
        arch.data_dim = image ? data_spec.channels * data_spec.side * data_spec.side : 2;
        arch.cond_dim = cfg.conditioned ? arch.data_dim : 0;
        arch.hidden = cfg.hidden;
    } else {
        throw ConfigError("model: unknown kind '" + kind + "'");
    }
    arch.validate();
    return arch;
}

std::string flow_stage_config(double sigma_p, const DegradationSpec& deg, Discrepancy d) {
    KvDoc doc;
    doc.set("flow", "sigma_p", format_double(sigma_p));
    doc.set("flow", "sigma_n", format_double(deg.sigma_n));
    doc.set("flow", "scale", std::to_string(deg.scale));
    doc.set("flow", "discrepancy", to_string(d));
    return doc.dump();
}

}  // namespace flowsr
