#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cmn/transformer.hpp"

namespace cmn {

struct AdamOptions {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
/// Parameters flagged `visual` use the visual learning rate.
class Adam {
public:
    explicit Adam(std::vector<NamedParameter> params, AdamOptions options = {});

    void zero_grad();
    /// One update from the parameters' current gradients. Throws TrainingError
    /// naming the parameter if a gradient is not finite.
    void step(Real lr_visual, Real lr_other);

    std::size_t step_count() const { return steps_; }
    std::span<const Real> first_moment(std::size_t i) const { return first_[i]; }
    std::span<const Real> second_moment(std::size_t i) const { return second_[i]; }

private:
    std::vector<NamedParameter> params_;
    AdamOptions options_;
    std::vector<std::vector<Real>> first_;
    std::vector<std::vector<Real>> second_;
    std::size_t steps_ = 0;
};

struct Schedule {
    Real lr_visual = 5e-5;
    Real lr_other = 1e-4;
    Real decay = 0.8;

    void validate() const;
    Real visual_at(std::size_t epoch) const;
    Real other_at(std::size_t epoch) const;
};

struct LossRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    Real loss = 0.0;
    Real lr_visual = 0.0;
    Real lr_other = 0.0;
};

struct TrainOptions {
    std::size_t epochs = 1;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    /// Global gradient-norm clip; 0 disables.
    Real grad_clip = 0.0;
    /// Stop after this many optimizer steps; 0 = no cap.
    std::size_t max_steps = 0;
    /// When set, `last.ckpt` is rewritten here after every epoch.
    std::filesystem::path checkpoint_dir;
    std::vector<std::string> vocab;
    std::function<void(std::size_t epoch, const ReportModel&)> on_epoch;
};

struct TrainResult {
    std::vector<LossRecord> log;
    std::size_t steps = 0;
};

/// Deterministic batch order for an epoch, derived from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);

TrainResult train(ReportModel& model, std::span<const TrainingPair> data, const Schedule& schedule,
                  const TrainOptions& options);

void write_loss_log(std::ostream& out, std::span<const LossRecord> log);
void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log);

}  // namespace cmn
