#pragma once

#include <functional>
#include <string>
#include <vector>

#include "solargeco/config.hpp"
#include "solargeco/data.hpp"
#include "solargeco/model.hpp"

namespace solargeco {

/// Linear warmup from 0 to lr_main over warmup_epochs (1-based epochs), then
/// cosine decay to 0 at total_epochs.
double lr_at_epoch(const TrainSettings& s, size_t epoch);

struct EpochStats {
    size_t epoch = 0; // 1-based
    double lr = 0.0;
    double train_loss = 0.0; // device-weighted mean of batch losses
    double val_loss = 0.0;   // NLL or MSE per head variant
    double val_mae = 0.0;
    double val_r2 = 0.0;
};

struct TrainingLog {
    std::vector<EpochStats> epochs;
    size_t best_epoch = 0; // minimal val_loss; first on exact ties
    bool stopped_early = false;
};

/// Fixed-format line for one epoch; reruns must match byte-for-byte.
std::string format_epoch_line(const EpochStats& e);

/// CSV: epoch,lr,train_loss,val_loss,val_mae,val_r2 rows plus best_epoch and
/// stopped_early footer lines.
void write_training_log(const std::string& path, const TrainingLog& log);

/// Trains on split.train with per-epoch validation on split.val; returns the
/// log and leaves the model holding the best-validation parameters. Throws
/// NumericError with an epoch/batch diagnostic when the loss stops being
/// finite.
TrainingLog train_model(SolarGeco& model, const PreparedDataset& prep,
                        const DatasetSplit& split, const TrainSettings& settings,
                        const std::function<void(const std::string&)>& log_line = {});

/// Eval-mode predictions over the listed devices, batched.
std::vector<PredictionRow> predict_ids(SolarGeco& model, const PreparedDataset& prep,
                                       std::span<const std::string> ids,
                                       size_t batch_size);

} // namespace solargeco
