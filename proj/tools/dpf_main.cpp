// Command-line front end: flags map onto RunConfig keys; a --config file is
// applied first and explicit flags override it.
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpf/cli.h"

namespace {

struct Binding {
  const char* flag;
  const char* key;
};

struct Command {
  const char* name;
  const char* help;
  std::vector<Binding> options;
  /// Boolean switches that set their key to "true".
  std::vector<Binding> switches;
  int (*run)(const dpf::RunConfig&, std::ostream&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> table = {
      {"gen", "Generate the synthetic dataset and its train/val split",
       {{"--out", "data.dir"}, {"--count", "data.count"}, {"--classes", "data.classes"}, {"--size", "data.size"},
        {"--seed", "data.seed"}, {"--split", "data.split"}, {"--split-seed", "data.split_seed"},
        {"--min-targets", "data.min_targets"}, {"--max-targets", "data.max_targets"},
        {"--occlusion", "data.occlusion"}, {"--turbidity", "data.turbidity"}},
       {},
       dpf::cmd_gen},
      {"pretrain", "Self-supervised Siamese pretraining of the backbone",
       {{"--data", "data.dir"}, {"--lr", "ssl.lr"}, {"--batch", "ssl.batch"}, {"--epochs", "ssl.epochs"},
        {"--view-size", "ssl.view_size"}, {"--projection-dim", "ssl.projection_dim"}, {"--seed", "ssl.seed"},
        {"--out", "ssl.out"}, {"--widths", "model.widths"}, {"--model-seed", "model.seed"}},
       {},
       dpf::cmd_pretrain},
      {"train", "Train one detector variant, keeping the best checkpoint by mAP",
       {{"--data", "data.dir"}, {"--variant", "model.variant"}, {"--init-backbone", "train.init_backbone"},
        {"--epochs", "train.epochs"}, {"--batch", "train.batch"}, {"--lr", "train.lr"},
        {"--momentum", "train.momentum"}, {"--warmup", "train.warmup"}, {"--seed", "train.seed"},
        {"--out", "train.out"}, {"--widths", "model.widths"}, {"--neck-width", "model.neck_width"},
        {"--model-seed", "model.seed"}, {"--w-re", "train.w_re"}, {"--w-co", "train.w_co"},
        {"--w-cl", "train.w_cl"}, {"--conf", "eval.conf"}, {"--nms", "eval.nms"}},
       {},
       dpf::cmd_train},
      {"eval", "Evaluate a trained detector; writes JSON and CSV reports",
       {{"--data", "data.dir"}, {"--model", "eval.model"}, {"--split", "eval.split"}, {"--conf", "eval.conf"},
        {"--nms", "eval.nms"}, {"--out", "eval.out"}},
       {{"--oracle", "eval.oracle"}},
       dpf::cmd_eval},
      {"gradcheck", "Finite-difference check of every differentiable op",
       {{"--tolerance", "gradcheck.tolerance"}},
       {{"--fault", "gradcheck.fault"}},
       dpf::cmd_gradcheck},
      {"ablate", "Train and evaluate all five variants on one dataset and seed",
       {{"--data", "data.dir"}, {"--epochs", "train.epochs"}, {"--batch", "train.batch"}, {"--lr", "train.lr"},
        {"--seed", "train.seed"}, {"--out", "ablate.out"}, {"--widths", "model.widths"},
        {"--neck-width", "model.neck_width"}, {"--init-backbone", "train.init_backbone"}},
       {},
       dpf::cmd_ablate},
      {"render", "Draw predictions (class colours) and missed targets (red) as PPM",
       {{"--data", "data.dir"}, {"--model", "render.model"}, {"--split", "render.split"},
        {"--limit", "render.limit"}, {"--conf", "render.conf"}, {"--out", "render.out"}},
       {},
       dpf::cmd_render},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Underwater detector toolkit: data, pretraining, training, evaluation and checks"};
  app.require_subcommand(1);

  const dpf::RunConfig defaults;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> toggles;
  std::string config_file;
  std::vector<std::string> overrides;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands()) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_file, "key = value file; explicit flags override it");
    sub->add_option("--set", overrides, "override any config key, as key=value (repeatable)");
    for (const Binding& b : c.options) {
      sub->add_option(b.flag, values[b.key], "[" + std::string(b.key) + "] default " + defaults.str(b.key));
    }
    for (const Binding& b : c.switches) sub->add_flag(b.flag, toggles[b.key], "[" + std::string(b.key) + "]");
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? dpf::kExitOk : dpf::kExitUsage;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    return dpf::run_guarded(
        [&, sub = sub, cmd = cmd] {
          dpf::RunConfig config;
          if (!config_file.empty()) config.merge_file(config_file);
          for (const Binding& b : cmd->options) {
            if (sub->count(b.flag) > 0) config.set(b.key, values[b.key]);
          }
          for (const Binding& b : cmd->switches) {
            if (toggles[b.key]) config.set(b.key, "true");
          }
          for (const std::string& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw dpf::UsageError("--set expects key=value, got '" + kv + "'");
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
          }
          return cmd->run(config, std::cout);
        },
        std::cerr);
  }
  return dpf::kExitUsage;
}
