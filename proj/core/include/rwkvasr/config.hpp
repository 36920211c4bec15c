#ifndef RWKVASR_CONFIG_HPP
#define RWKVASR_CONFIG_HPP

#include <string>

// Flat key=value configuration. The key set is closed: unknown keys are
// rejected so that typos fail loudly instead of silently training the wrong
// model. '#' starts a comment; blank lines are ignored.

namespace rwkvasr {

struct ModelConfig {
    int d_io = 64;
    int d_att = 64;
    int d_linear = 256;
    int blocks = 4;
    double dropout = 0.1;
    int n_mels = 80;
    int conv_channels = 16;
    int vocab = 16;  // labels 1..vocab; index 0 is blank
    int d_pred = 64;
    int d_joint = 64;

    void validate() const;
};

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 30;
    int batch = 8;
    std::string loss = "full";  // full | bat
    int band_width = 5;
    int utterances = 2000;
    int label_min = 3;
    int label_max = 8;
    int holdout = 200;  // utterances reserved for held-out accuracy
    double noise = 0.1;
    double aug_noise = 0.0;  // extra per-visit feature noise during training; 0 disables
    int cif_pretrain_epochs = 2;
    double early_stop_accuracy = 0.97;  // 0 disables early stopping

    void validate() const;
};

struct FullConfig {
    ModelConfig model;
    TrainConfig train;
};

FullConfig parse_config_text(const std::string& text);
FullConfig parse_config_file(const std::string& path);

// Canonical one-key-per-line rendering of the model block (used verbatim in
// checkpoint headers, so it must be deterministic).
std::string render_model_config(const ModelConfig& cfg);

}  // namespace rwkvasr

#endif
