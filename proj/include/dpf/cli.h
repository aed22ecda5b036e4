#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpf/config.h"
#include "dpf/detector.h"

namespace dpf {

/// Stable process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitVerification = 2, kExitIo = 3 };

/// A check the run itself performs failed (divergence, collapse, gradient
/// mismatch, checkpoint/model disagreement): exit code 2.
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `body`, printing any exception as a one-line diagnostic to `err` and
/// mapping it to an exit code: UsageError and std::invalid_argument
/// (ShapeError included) -> 1; VerificationError and checkpoint name/shape mismatches
/// -> 2; DataError, stream and filesystem errors and unreadable checkpoints -> 3.
int run_guarded(const std::function<int()>& body, std::ostream& err);

SceneSpec scene_spec(const RunConfig& config);
std::array<std::int64_t, 4> parse_widths(const std::string& text);
std::vector<std::string> class_names(int num_classes);

/// FNV-1a over the manifest, split lists, labels and images of a dataset.
std::string dataset_hash(const std::filesystem::path& dir);

/// model.json beside a checkpoint: everything needed to rebuild the network.
void write_model_card(const std::filesystem::path& path, const DetectorConfig& config);
DetectorConfig read_model_card(const std::filesystem::path& path);

/// Loads `checkpoint` into `model`. On any disagreement prints every
/// missing, unexpected and mis-shaped name to `out` and throws VerificationError.
void load_model_weights(const std::filesystem::path& checkpoint, Detector& model, std::ostream& out);

struct EpochRecord {
  std::size_t epoch = 0;
  double l_re = 0, l_co = 0, l_cl = 0, total = 0;
  MetricsReport report;
};

struct TrainOutcome {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_map = 0;
  MetricsReport best_report;
};

/// Trains `variant` on the train split of config's dataset, evaluates the
/// val split after each epoch and keeps the checkpoint with the highest
/// mAP@0.5 (earliest epoch on ties). Writes best.ckpt, model.json,
/// train_log.jsonl and config.txt into `out_dir`. Throws VerificationError
/// on a non-finite loss.
TrainOutcome train_and_evaluate(const RunConfig& config, const VariantSpec& variant,
                                const std::filesystem::path& out_dir, std::ostream& out);

int cmd_gen(const RunConfig& config, std::ostream& out);
int cmd_pretrain(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);
int cmd_eval(const RunConfig& config, std::ostream& out);
int cmd_gradcheck(const RunConfig& config, std::ostream& out);
int cmd_ablate(const RunConfig& config, std::ostream& out);
int cmd_render(const RunConfig& config, std::ostream& out);

}  // namespace dpf
