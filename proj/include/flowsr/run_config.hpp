#pragma once

#include <string>

#include "flowsr/datasets.hpp"
#include "flowsr/degradation.hpp"
#include "flowsr/distill.hpp"
#include "flowsr/model.hpp"
#include "flowsr/teacher.hpp"

namespace flowsr {

// Parsed training-run description (strict: unknown sections or keys are
// rejected, referenced files must exist).
struct RunConfig {
    std::string stage;  // "teacher" or "distill"

    std::string dataset_file;  // when set, load instead of generating
    DatasetSpec dataset;

    DegradationSpec degradation;

    // Teacher stage.
    bool conditioned = true;
    std::string model_kind = "auto";  // auto | mlp | conv
    int time_embed_dim = 8;
    std::vector<int> hidden = {64, 64};
    std::vector<int> conv_channels = {16, 24, 16, 8};
    FlowConfig flow;

    // Distillation stage.
    std::string teacher_checkpoint;
    DistillConfig distill;
    double distill_sigma_p = -1.0;  // < 0: inherit from the teacher checkpoint

    std::string out_dir = ".";
    std::string name;  // artifact stem; defaults to the stage name
    int log_every = 0;
};

RunConfig load_run_config(const std::string& path);

// Backbone for a dataset: MLP for 2-d points, conv net for images.
ModelArch resolve_arch(const RunConfig& cfg, const DatasetSpec& data_spec);

// Stage metadata embedded into checkpoints so sampling and distillation can
// rebuild the start state: [flow] sigma_p / sigma_n / scale / discrepancy.
std::string flow_stage_config(double sigma_p, const DegradationSpec& deg, Discrepancy d);

}  // namespace flowsr
