#include "cmn/trainer.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "cmn/errors.hpp"

namespace cmn {

Adam::Adam(std::vector<NamedParameter> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        first_.emplace_back(p.tensor.numel(), 0.0);
        second_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(Real lr_visual, Real lr_other) {
    for (const auto& p : params_) {
        for (Real g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw TrainingError("non-finite gradient in parameter '" + p.name + "'");
        }
    }
    ++steps_;
    const Real t = static_cast<Real>(steps_);
    const Real correction1 = 1.0 - std::pow(options_.beta1, t);
    const Real correction2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const auto grad = p.tensor.grad();
        auto values = p.tensor.mutable_data();
        auto& m = first_[i];
        auto& v = second_[i];
        const Real lr = p.visual ? lr_visual : lr_other;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const Real g = grad.empty() ? 0.0 : grad[j];
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
            const Real m_hat = m[j] / correction1;
            const Real v_hat = v[j] / correction2;
            values[j] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
        }
    }
}

void Schedule::validate() const {
    if (!(lr_visual > 0.0) || !(lr_other > 0.0)) throw ArgumentError("learning rates must be positive");
    if (!(decay > 0.0 && decay <= 1.0)) throw ArgumentError("lr decay must be in (0,1]");
}

Real Schedule::visual_at(std::size_t epoch) const {
    return lr_visual * std::pow(decay, static_cast<Real>(epoch));
}

Real Schedule::other_at(std::size_t epoch) const {
    return lr_other * std::pow(decay, static_cast<Real>(epoch));
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
    Rng rng(derive_seed(seed, 1000 + epoch));
    return rng.permutation(count);
}

namespace {

void clip_gradients(const std::vector<NamedParameter>& params, Real max_norm) {
    Real total = 0.0;
    for (const auto& p : params)
        for (Real g : p.tensor.grad()) total += g * g;
    const Real norm = std::sqrt(total);
    if (norm <= max_norm || norm == 0.0) return;
    const Real factor = max_norm / norm;
    for (const auto& p : params) {
        Tensor t = p.tensor;
        if (t.grad().empty()) continue;
        for (Real& g : t.mutable_grad()) g *= factor;
    }
}

}  // namespace

TrainResult train(ReportModel& model, std::span<const TrainingPair> data, const Schedule& schedule,
                  const TrainOptions& options) {
    if (data.empty()) throw ArgumentError("training set is empty");
    if (options.batch_size == 0) throw ArgumentError("batch_size must be positive");
    schedule.validate();

    Adam optimizer(model.parameters());
    Rng dropout_rng(derive_seed(options.seed, 7));
    ForwardContext ctx;
    ctx.training = true;
    ctx.rng = &dropout_rng;

    TrainResult result;
    std::vector<TrainingPair> batch;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const Real lr_v = schedule.visual_at(epoch);
        const Real lr_o = schedule.other_at(epoch);
        const auto order = epoch_order(data.size(), options.seed, epoch);
        bool capped = false;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i)
                batch.push_back(data[order[i]]);
            optimizer.zero_grad();
            Tensor loss = model.batch_loss(batch, ctx);
            loss.backward();
            if (options.grad_clip > 0.0) clip_gradients(model.parameters(), options.grad_clip);
            optimizer.step(lr_v, lr_o);
            ++result.steps;
            result.log.push_back(LossRecord{epoch, result.steps, loss.item(), lr_v, lr_o});
            if (options.max_steps && result.steps >= options.max_steps) {
                capped = true;
                break;
            }
        }
        if (!options.checkpoint_dir.empty()) {
            save_checkpoint(options.checkpoint_dir / "last.ckpt", model, options.vocab);
        }
        if (options.on_epoch) options.on_epoch(epoch, model);
        if (capped) break;
    }
    return result;
}

void write_loss_log(std::ostream& out, std::span<const LossRecord> log) {
    out << "epoch,step,loss,lr_visual,lr_other\n";
    const auto old = out.precision(10);
    for (const auto& r : log) out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.lr_visual << ',' << r.lr_other << '\n';
    out.precision(old);
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossRecord> log) {
    std::ofstream out(path);
    if (!out) throw FileError("cannot write " + path.string());
    write_loss_log(out, log);
}

}  // namespace cmn
