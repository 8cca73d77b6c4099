#include "flowsr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "flowsr/checkpoint.hpp"
#include "flowsr/datasets.hpp"
#include "flowsr/distill.hpp"
#include "flowsr/errors.hpp"
#include "flowsr/kvconfig.hpp"
#include "flowsr/manifest.hpp"
#include "flowsr/metrics.hpp"
#include "flowsr/run_config.hpp"
#include "flowsr/selftest.hpp"
#include "flowsr/solvers.hpp"
#include "flowsr/teacher.hpp"

namespace flowsr {

namespace {

namespace fs = std::filesystem;

int env_log_level() {
    const char* v = std::getenv("FLOWSR_LOG");
    return v == nullptr ? 0 : std::atoi(v);
}

int default_log_every() {
    switch (env_log_level()) {
        case 0: return 0;
        case 1: return 200;
        default: return 50;
    }
}

std::string join_args(const std::vector<std::string>& args) {
    std::string s = "flowsr";
    for (const auto& a : args) {
        s += " " + a;
    }
    return s;
}

struct StageInfo {
    double sigma_p = 0.1;
    DegradationSpec deg;
    Discrepancy discrepancy = Discrepancy::L1;
};

StageInfo stage_info_from_config(const std::string& config_text) {
    const KvDoc doc = KvDoc::parse(config_text);
    StageInfo info;
    if (doc.has_section("flow")) {
        info.sigma_p = doc.get_double_or("flow", "sigma_p", 0.1);
        info.deg.sigma_n = doc.get_double_or("flow", "sigma_n", 0.0);
        info.deg.scale = static_cast<int>(doc.get_int_or("flow", "scale", 1));
        info.discrepancy = discrepancy_from_string(doc.get_or("flow", "discrepancy", "l1"));
    }
    return info;
}

Dataset resolve_dataset(const RunConfig& cfg) {
    if (!cfg.dataset_file.empty()) {
        return load_dataset(cfg.dataset_file);
    }
    return generate_dataset(cfg.dataset);
}

void write_teacher_trace(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw FormatError("trace: cannot open '" + path + "'");
    }
    os << "iteration,loss,lr,wall_ms\n";
    for (const auto& r : trace) {
        os << r.iteration << ',' << format_double(r.loss) << ',' << format_double(r.lr) << ','
           << format_double(r.wall_ms) << "\n";
    }
}

void write_distill_trace(const std::vector<DistillTraceRow>& trace, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw FormatError("trace: cannot open '" + path + "'");
    }
    os << "iteration,distill,align,bc,total,lr,wall_ms\n";
    for (const auto& r : trace) {
        os << r.iteration << ',' << format_double(r.distill) << ',' << format_double(r.align)
           << ',' << format_double(r.bc) << ',' << format_double(r.total) << ','
           << format_double(r.lr) << ',' << format_double(r.wall_ms) << "\n";
    }
}

int cmd_gen_data(const DatasetSpec& spec, const std::string& out,
                 const std::vector<std::string>& argv) {
    const Dataset ds = generate_dataset(spec);
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
    save_dataset(ds, out);
    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("kind", to_string(spec.kind));
    mw.set("count", std::to_string(spec.count));
    mw.set("seed", std::to_string(spec.seed));
    mw.add_output(out);
    mw.write(out + ".manifest");
    std::cout << "wrote " << out << " (" << spec.count << " samples)\n";
    return 0;
}

int cmd_train_teacher(const std::string& config_path, const std::vector<std::string>& argv) {
    const RunConfig rc = load_run_config(config_path);
    if (rc.stage != "teacher") {
        throw ConfigError("train-teacher: config stage is '" + rc.stage + "'");
    }
    const Dataset ds = resolve_dataset(rc);
    const ModelArch arch = resolve_arch(rc, ds.spec);
    TensorSource source(ds.samples);

    fs::create_directories(rc.out_dir);
    const std::string stem = (fs::path(rc.out_dir) / rc.name).string();

    TeacherTrainConfig tc;
    tc.arch = arch;
    tc.degradation = rc.degradation;
    tc.flow = rc.flow;
    tc.lastgood_path = stem + ".lastgood.ckpt";
    tc.log_every = rc.log_every > 0 ? rc.log_every : default_log_every();

    const TeacherTrainResult result = train_teacher(source, tc);

    const std::string ckpt = stem + ".ckpt";
    const std::string trace = stem + ".trace.csv";
    save_checkpoint(result.model, ckpt,
                    flow_stage_config(rc.flow.sigma_p, rc.degradation, rc.flow.discrepancy) +
                        "[stage]\nname = teacher\n");
    write_teacher_trace(result.trace, trace);

    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("config", config_path);
    mw.set("seed", std::to_string(rc.flow.seed));
    mw.set("iterations", std::to_string(rc.flow.iterations));
    mw.add_input(config_path);
    if (!rc.dataset_file.empty()) {
        mw.add_input(rc.dataset_file);
    }
    mw.add_output(ckpt);
    mw.add_output(trace);
    mw.write(stem + ".manifest");
    std::cout << "teacher checkpoint " << ckpt << " final loss "
              << format_double(result.trace.empty() ? 0.0 : result.trace.back().loss) << "\n";
    return 0;
}

int cmd_distill(const std::string& config_path, const std::vector<std::string>& argv) {
    const RunConfig rc = load_run_config(config_path);
    if (rc.stage != "distill") {
        throw ConfigError("distill: config stage is '" + rc.stage + "'");
    }
    LoadedCheckpoint teacher = load_checkpoint(rc.teacher_checkpoint);
    teacher.model.frozen = true;
    const StageInfo info = stage_info_from_config(teacher.config_text);

    const Dataset ds = resolve_dataset(rc);
    TensorSource source(ds.samples);

    fs::create_directories(rc.out_dir);
    const std::string stem = (fs::path(rc.out_dir) / rc.name).string();

    DistillTrainConfig dc;
    dc.degradation = rc.degradation.scale == info.deg.scale && rc.degradation.sigma_n == info.deg.sigma_n
                         ? info.deg
                         : rc.degradation;
    dc.sigma_p = rc.distill_sigma_p >= 0.0 ? rc.distill_sigma_p : info.sigma_p;
    dc.distill = rc.distill;
    dc.lastgood_path = stem + ".lastgood.ckpt";
    dc.log_every = rc.log_every > 0 ? rc.log_every : default_log_every();

    const DistillTrainResult result = distill_train(teacher.model, source, dc);

    const std::string ckpt = stem + ".ckpt";
    const std::string trace = stem + ".trace.csv";
    KvDoc extra;
    extra.set("distill", "dt", format_double(dc.distill.dt));
    extra.set("distill", "variant", to_string(dc.distill.variant));
    extra.set("distill", "slope", to_string(dc.distill.slope_kind));
    save_checkpoint(result.student, ckpt,
                    flow_stage_config(dc.sigma_p, dc.degradation, Discrepancy::L2) +
                        "[stage]\nname = distill\n" + extra.dump());
    write_distill_trace(result.trace, trace);

    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("config", config_path);
    mw.set("seed", std::to_string(rc.distill.seed));
    mw.add_input(config_path);
    mw.add_input(rc.teacher_checkpoint);
    if (!rc.dataset_file.empty()) {
        mw.add_input(rc.dataset_file);
    }
    mw.add_output(ckpt);
    mw.add_output(trace);
    mw.write(stem + ".manifest");
    std::cout << "student checkpoint " << ckpt << " final total "
              << format_double(result.trace.empty() ? 0.0 : result.trace.back().total) << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& data_path,
               const std::string& solver, int steps, double tol, int limit, int stride,
               std::uint64_t seed, const std::string& out, const std::vector<std::string>& argv) {
    const LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    const VelocityModel& model = loaded.model;
    const StageInfo info = stage_info_from_config(loaded.config_text);
    const Dataset ds = load_dataset(data_path);
    TensorSource source(ds.samples);

    SolverSpec spec;
    spec.kind = solver_kind_from_string(solver);
    spec.steps = steps;
    spec.tol = tol;
    spec.record_stride = stride;
    spec.validate();

    const std::size_t n =
        limit > 0 ? std::min<std::size_t>(source.size(), static_cast<std::size_t>(limit))
                  : source.size();
    Rng rng(seed);
    const double keep = std::sqrt(1.0 - info.sigma_p * info.sigma_p);
    const bool conditional = model.arch.has_cond();

    TensorArchive archive;
    archive.config_text = "[sample]\nsolver = " + to_string(spec.kind) + "\ncount = " +
                          std::to_string(n) + "\nseed = " + std::to_string(seed) + "\n";
    double nfe_sum = 0.0;
    std::int64_t nfe_max = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor x1 = source.get(i);
        const Tensor xlr = build_lr_condition(x1, info.deg, rng);
        Tensor x0 = xlr;
        for (std::size_t p = 0; p < x0.numel(); ++p) {
            x0[p] = keep * x0[p] + info.sigma_p * rng.normal();
        }
        Shape bshape = x0.shape();
        bshape.insert(bshape.begin(), 1);
        const Tensor x0b = Tensor::raw(bshape, x0.vec());
        const Tensor condb = Tensor::raw(bshape, xlr.vec());
        const VelocityFn field = [&](const Tensor& x, double t) {
            return velocity_eval(model, WeightKind::Ema, x, conditional ? &condb : nullptr,
                                 {t});
        };
        const SolveResult res = solve(field, x0b, spec);
        nfe_sum += static_cast<double>(res.trajectory.nfe);
        nfe_max = std::max(nfe_max, res.trajectory.nfe);
        char name[64];
        std::snprintf(name, sizeof(name), "endpoint/%04zu", i);
        archive.records.emplace_back(name, Tensor::raw(x1.shape(), res.x1.vec()));
        if (stride > 0) {
            Tensor times = Tensor::zeros({res.trajectory.times.size()});
            for (std::size_t k = 0; k < res.trajectory.times.size(); ++k) {
                times[k] = res.trajectory.times[k];
            }
            std::snprintf(name, sizeof(name), "trajectory/%04zu/t", i);
            archive.records.emplace_back(name, std::move(times));
            for (std::size_t k = 0; k < res.trajectory.states.size(); ++k) {
                std::snprintf(name, sizeof(name), "trajectory/%04zu/x%03zu", i, k);
                archive.records.emplace_back(
                    name, Tensor::raw(x1.shape(), res.trajectory.states[k].vec()));
            }
        }
    }
    write_archive(archive, out);
    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("seed", std::to_string(seed));
    mw.add_input(ckpt_path);
    mw.add_input(data_path);
    mw.add_output(out);
    mw.write(out + ".manifest");
    std::printf("nfe_mean=%.3f nfe_max=%lld samples=%zu solver=%s\n", nfe_sum / static_cast<double>(n),
                static_cast<long long>(nfe_max), n, to_string(spec.kind).c_str());
    return 0;
}

int cmd_sweep(const std::string& ckpt_path, const std::string& data_path, const std::string& mode,
              const std::string& t_grid_csv, std::uint64_t seed, int limit, int substeps,
              const std::string& out, const std::string& strips,
              const std::vector<std::string>& argv) {
    const LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    const StageInfo info = stage_info_from_config(loaded.config_text);
    const Dataset ds = load_dataset(data_path);
    TensorSource source(ds.samples);

    SweepConfig sc;
    sc.mode = sweep_mode_from_string(mode);
    sc.t_grid = parse_double_list(t_grid_csv);
    sc.seed = seed;
    sc.teacher_substeps = substeps;
    sc.max_samples = limit > 0 ? static_cast<std::size_t>(limit) : 0;

    SweepResult result = tradeoff_sweep(loaded.model, source, info.deg, info.sigma_p, sc);
    result.model_id = ckpt_path + ":" + hash_hex(fnv1a_file(ckpt_path));
    result.dataset_id = data_path + ":" + hash_hex(fnv1a_file(data_path));
    write_sweep_csv(result, out);

    if (!strips.empty() && loaded.model.arch.kind == Backbone::Conv) {
        // One strip per dumped sample: LR condition, estimates over the grid,
        // ground truth.
        Rng rng(seed + 0x53eedULL);
        const double keep = std::sqrt(1.0 - info.sigma_p * info.sigma_p);
        const std::size_t dump = std::min<std::size_t>(source.size(), 4);
        for (std::size_t i = 0; i < dump; ++i) {
            const Tensor x1 = source.get(i);
            const Tensor xlr = build_lr_condition(x1, info.deg, rng);
            Tensor x0 = xlr;
            for (std::size_t p = 0; p < x0.numel(); ++p) {
                x0[p] = keep * x0[p] + info.sigma_p * rng.normal();
            }
            Shape bshape = x0.shape();
            bshape.insert(bshape.begin(), 1);
            const Tensor x0b = Tensor::raw(bshape, x0.vec());
            const Tensor condb = Tensor::raw(bshape, xlr.vec());
            std::vector<Tensor> strip;
            strip.push_back(xlr);
            for (double t : sc.t_grid) {
                const Tensor v = velocity_eval(loaded.model, WeightKind::Ema, x0b,
                                               loaded.model.arch.has_cond() ? &condb : nullptr,
                                               {t});
                strip.push_back(Tensor::raw(x1.shape(), add(x0b, v).vec()));
            }
            strip.push_back(x1);
            write_image_strip_pgm(strip, strips + "." + std::to_string(i) + ".pgm");
        }
    }

    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("seed", std::to_string(seed));
    mw.set("mode", mode);
    mw.add_input(ckpt_path);
    mw.add_input(data_path);
    mw.add_output(out);
    mw.write(out + ".manifest");
    for (const auto& row : result.rows) {
        std::printf("t=%.3f psnr=%.3f proxy=%.6f n=%zu\n", row.t, row.psnr_mean, row.proxy_mean,
                    row.n);
    }
    return 0;
}

int cmd_straightness(const std::string& ckpt_path, const std::string& data_path, int time_points,
                     int samples, std::uint64_t seed, const std::vector<std::string>& argv) {
    const LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    const VelocityModel& model = loaded.model;
    const StageInfo info = stage_info_from_config(loaded.config_text);
    const Dataset ds = load_dataset(data_path);
    TensorSource source(ds.samples);
    const bool conditional = model.arch.has_cond();
    const double keep = std::sqrt(1.0 - info.sigma_p * info.sigma_p);

    const CouplingSampler sampler = [&](Rng& rng) {
        Coupling c;
        c.x1 = source.draw(rng);
        const Tensor xlr = build_lr_condition(c.x1, info.deg, rng);
        c.x0 = xlr;
        for (std::size_t p = 0; p < c.x0.numel(); ++p) {
            c.x0[p] = keep * c.x0[p] + info.sigma_p * rng.normal();
        }
        if (conditional) {
            c.cond = xlr;
        }
        return c;
    };
    const CondBatchVelocityFn field = [&](const Tensor& x, const Tensor* cond,
                                          const std::vector<double>& ts) {
        return velocity_eval(model, WeightKind::Ema, x, cond, ts);
    };
    const double s = straightness(field, sampler, time_points, samples, seed);
    ManifestWriter mw;
    mw.set("command", join_args(argv));
    mw.set("seed", std::to_string(seed));
    mw.set("straightness", format_double(s));
    mw.add_input(ckpt_path);
    mw.add_input(data_path);
    mw.write(ckpt_path + ".straightness.manifest");
    std::printf("straightness=%s time_points=%d samples=%d\n", format_double(s).c_str(),
                time_points, samples);
    return 0;
}

int cmd_check(const std::string& suite) {
    std::vector<CheckLine> lines;
    if (suite == "grad") {
        lines = check_grad_battery();
    } else if (suite == "adjoint") {
        lines = check_adjoint_battery();
    } else if (suite == "solver-order") {
        lines = check_solver_order_battery();
    } else if (suite == "oracle") {
        lines = check_oracle_battery();
    } else {
        throw UsageError("check: unknown suite '" + suite +
                         "' (expected grad|adjoint|solver-order|oracle)");
    }
    for (const auto& l : lines) {
        std::printf("%s %s: %s\n", l.pass ? "ok  " : "FAIL", l.name.c_str(), l.detail.c_str());
    }
    return all_pass(lines) ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"flowsr: conditional rectified-flow super-resolution at desk scale"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    DatasetSpec gspec;
    std::string gkind = "tiny-textures";
    std::string gout = "dataset.bin";
    gen->add_option("--kind", gkind, "toy2d-gmm | tiny-textures");
    gen->add_option("--count", gspec.count, "number of samples");
    gen->add_option("--seed", gspec.seed, "generator seed");
    gen->add_option("--side", gspec.side, "texture side length");
    gen->add_option("--channels", gspec.channels, "texture channels");
    gen->add_option("--blobs", gspec.blobs, "gaussian bumps per texture");
    gen->add_option("--sinusoids", gspec.sinusoids, "plane waves per texture");
    gen->add_option("--scale", gspec.scale, "intended SR scale");
    gen->add_option("--components", gspec.components, "gmm components");
    gen->add_option("--radius", gspec.radius, "gmm circle radius");
    gen->add_option("--component-std", gspec.component_std, "gmm component std");
    gen->add_option("--out", gout, "output container path");

    // train-teacher / distill
    auto* tt = app.add_subcommand("train-teacher", "stage 1: train the conditional flow");
    std::string tt_config;
    tt->add_option("--config", tt_config, "run config path")->required();
    auto* dd = app.add_subcommand("distill", "stage 2: one-step student distillation");
    std::string dd_config;
    dd->add_option("--config", dd_config, "run config path")->required();

    // sample
    auto* sp = app.add_subcommand("sample", "integrate the learned flow on a dataset");
    std::string sp_ckpt, sp_data, sp_out = "samples.bin", sp_solver = "rk45";
    int sp_steps = 32, sp_limit = 0, sp_stride = 0;
    double sp_tol = 1e-3;
    std::uint64_t sp_seed = 0;
    sp->add_option("--checkpoint", sp_ckpt)->required();
    sp->add_option("--data", sp_data)->required();
    sp->add_option("--solver", sp_solver, "euler|midpoint|heun|ralston|rk45");
    sp->add_option("--steps", sp_steps, "fixed-step count");
    sp->add_option("--tol", sp_tol, "rk45 tolerance");
    sp->add_option("--limit", sp_limit, "max samples (0: all)");
    sp->add_option("--stride", sp_stride, "trajectory record stride (0: endpoints only)");
    sp->add_option("--seed", sp_seed);
    sp->add_option("--out", sp_out);

    // sweep
    auto* sw = app.add_subcommand("sweep", "fidelity-realism sweep over t");
    std::string sw_ckpt, sw_data, sw_mode = "student", sw_grid = "0,0.25,0.5,0.75,1",
                sw_out = "sweep.csv", sw_strips;
    int sw_limit = 0, sw_substeps = 64;
    std::uint64_t sw_seed = 0;
    sw->add_option("--checkpoint", sw_ckpt)->required();
    sw->add_option("--data", sw_data)->required();
    sw->add_option("--mode", sw_mode, "student | teacher");
    sw->add_option("--t-grid", sw_grid, "comma-separated t values");
    sw->add_option("--limit", sw_limit, "max samples (0: all)");
    sw->add_option("--substeps", sw_substeps, "teacher-mode midpoint steps per unit time");
    sw->add_option("--seed", sw_seed);
    sw->add_option("--out", sw_out);
    sw->add_option("--strips", sw_strips, "PGM strip path prefix (conv models)");

    // straightness
    auto* st = app.add_subcommand("straightness", "flow straightness on true couplings");
    std::string st_ckpt, st_data;
    int st_k = 32, st_n = 2000;
    std::uint64_t st_seed = 0;
    st->add_option("--checkpoint", st_ckpt)->required();
    st->add_option("--data", st_data)->required();
    st->add_option("--time-points", st_k);
    st->add_option("--samples", st_n, "couplings per time point");
    st->add_option("--seed", st_seed);

    // check
    auto* ck = app.add_subcommand("check", "run a self-test battery");
    std::string ck_suite;
    ck->add_option("--suite", ck_suite, "grad | adjoint | solver-order | oracle")->required();

    std::vector<const char*> argv;
    argv.push_back("flowsr");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            gspec.kind = dataset_kind_from_string(gkind);
            gspec.validate();
            return cmd_gen_data(gspec, gout, args);
        }
        if (tt->parsed()) {
            return cmd_train_teacher(tt_config, args);
        }
        if (dd->parsed()) {
            return cmd_distill(dd_config, args);
        }
        if (sp->parsed()) {
            return cmd_sample(sp_ckpt, sp_data, sp_solver, sp_steps, sp_tol, sp_limit, sp_stride,
                              sp_seed, sp_out, args);
        }
        if (sw->parsed()) {
            return cmd_sweep(sw_ckpt, sw_data, sw_mode, sw_grid, sw_seed, sw_limit, sw_substeps,
                             sw_out, sw_strips, args);
        }
        if (st->parsed()) {
            return cmd_straightness(st_ckpt, st_data, st_k, st_n, st_seed, args);
        }
        if (ck->parsed()) {
            return cmd_check(ck_suite);
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace flowsr
