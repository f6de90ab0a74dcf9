#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "suesr/datapipe.hpp"
#include "suesr/features.hpp"
#include "suesr/networks.hpp"
#include "suesr/objectives.hpp"
#include "suesr/semantics.hpp"

namespace suesr {

struct TrainConfig {
    int max_epochs = 30;
    int patience = 10;
    int batch_size = 16;
    double lr_generator = 1e-4;
    double lr_discriminator = 1e-4;
    double finetune_lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    LossWeights weights;
    std::uint64_t seed = 0;
    std::string monitor = "val_psnr";
    /// Epochs of pixel-loss-only generator updates before adversarial training.
    int pretrain_epochs = 0;
    /// Global cap on optimizer steps; 0 means no cap.
    long max_steps = 0;

    /// `allow_zero_epochs` is used by fine-tuning.
    void validate(bool allow_zero_epochs = false) const;
};

struct EarlyStopState {
    double best_value = -std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_since_improvement = 0;
};

/// Higher-is-better update with strict improvement. Returns the new state
/// and whether training should stop after this epoch.
std::pair<EarlyStopState, bool> early_stop_update(const EarlyStopState& state, double value, int epoch, int patience);

/// Adam with parameters kept at float32 precision after every step.
class Adam {
public:
    Adam() = default;
    Adam(const ParameterSet& layout, double lr, double beta1, double beta2, double epsilon = 1e-8);

    void step(ParameterSet& params, const ParameterSet& grads);

    double lr = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long steps = 0;
    ParameterSet m;
    ParameterSet v;
};

struct Checkpoint {
    GeneratorConfig generator_config;
    DiscriminatorConfig discriminator_config;
    ParameterSet generator;
    ParameterSet discriminator;
    Adam generator_optimizer;
    Adam discriminator_optimizer;
    int epoch = 0;
    std::string monitor = "val_psnr";
    double monitor_value = -std::numeric_limits<double>::infinity();
    std::string config_hash;
    std::uint64_t seed = 0;
    long global_step = 0;
};

/// Hash of the generator and discriminator architectures only.
std::string architecture_hash(const GeneratorConfig& g, const DiscriminatorConfig& d);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainingBackends {
    const Segmenter& segmenter;
    const FeatureExtractor& features;
};

struct EpochRecord {
    int epoch = 0;
    long steps = 0;
    LossBreakdown generator;  // means over the epoch's steps
    double discriminator = 0.0;
    double monitor_value = 0.0;
    bool improved = false;
};

struct TrainingResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    int epochs_run = 0;
    bool stopped_early = false;
    long steps = 0;
};

std::string history_to_json(const std::vector<EpochRecord>& history);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Generator objective for one batch, backpropagated through the
/// discriminator, the segmenter and the feature extractor to the generator
/// parameters.
struct GeneratorObjective {
    LossBreakdown losses;
    ParameterSet grads;
    std::vector<double> real_logits;
    std::vector<double> fake_logits;
};
GeneratorObjective generator_objective(const Generator& gen, const Discriminator& disc, const Tensor& lr_batch,
                                       const Tensor& hr_batch, const DropoutMode& mode, const LossWeights& weights,
                                       const TrainingBackends& backends, bool want_grads = true);

/// Mean validation PSNR with dropout disabled; outputs are clamped to [0, 1].
double validation_psnr(const Generator& gen, const Manifest& manifest, const std::string& split, int batch_size);

TrainingResult train(const GeneratorConfig& gen_config, const DiscriminatorConfig& disc_config,
                     const TrainConfig& config, const Manifest& manifest, const TrainingBackends& backends,
                     const std::string& config_hash, const EpochCallback& on_epoch = {});

/// Continues training a checkpoint on a new manifest with fresh optimizers
/// at `finetune_lr`. max_epochs = 0 returns the source weights unchanged.
TrainingResult finetune(const Checkpoint& source, const GeneratorConfig& gen_config,
                        const DiscriminatorConfig& disc_config, const TrainConfig& config, const Manifest& manifest,
                        const TrainingBackends& backends, const std::string& config_hash,
                        const EpochCallback& on_epoch = {});

}  // namespace suesr
