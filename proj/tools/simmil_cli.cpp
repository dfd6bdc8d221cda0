// Command-line surface over the simmil C API. Exit codes follow the library
// contract: 0 success, 1 runtime failure, 2 usage/config errors.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "simmil/simmil.h"

namespace {

int finish(simmil_status st) {
  if (st != SIMMIL_OK) std::fprintf(stderr, "error: %s\n", simmil_last_error());
  return int(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simmil: weakly supervised MIL pretraining toolkit"};
  app.set_version_flag("--version", std::string(simmil_version()));
  app.require_subcommand(1);

  std::string config, data, out, ckpt, features, agg = "max";
  uint64_t seed = 0;
  int trials = 100;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd, bool with_data, bool with_seed) {
    cmd->add_option("--config", config, "experiment config file")->required();
    if (with_data) cmd->add_option("--data", data, "dataset directory")->required();
    cmd->add_option("--out", out, "output directory")->required();
    if (with_seed) cmd->add_option("--seed", seed, "random seed");
  };

  CLI::App* synth = app.add_subcommand("synth-bags", "generate a synthetic MIL dataset");
  synth->add_option("--config", config)->required();
  synth->add_option("--out", out)->required();
  synth->add_option("--seed", seed);

  CLI::App* pretrain = app.add_subcommand("pretrain", "label-propagation pretraining");
  add_common(pretrain, true, true);

  CLI::App* pretrain_surv =
      app.add_subcommand("pretrain-survival", "ranking-loss survival pretraining");
  add_common(pretrain_surv, true, true);

  CLI::App* pretrain_con =
      app.add_subcommand("pretrain-contrastive", "contrastive baseline pretraining");
  add_common(pretrain_con, true, true);

  CLI::App* cont = app.add_subcommand("continue", "continue pretraining from a checkpoint");
  add_common(cont, true, true);
  cont->add_option("--ckpt", ckpt, "parent checkpoint")->required();

  CLI::App* extract = app.add_subcommand("extract", "extract per-bag instance features");
  add_common(extract, true, false);
  extract->add_option("--ckpt", ckpt, "checkpoint to extract with")->required();

  CLI::App* train_agg = app.add_subcommand("train-agg", "train a downstream MIL aggregator");
  train_agg->add_option("--config", config)->required();
  train_agg->add_option("--features", features, "feature cache directory")->required();
  train_agg->add_option("--agg", agg, "max|mean|abmil|dsmil");
  train_agg->add_option("--out", out)->required();
  train_agg->add_option("--seed", seed);

  CLI::App* eval_inst = app.add_subcommand("eval-instance", "instance-level probe/fine-tune");
  add_common(eval_inst, true, true);
  eval_inst->add_option("--ckpt", ckpt, "checkpoint to evaluate")->required();

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--out", out, "directory for gradcheck.json");
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--trials", trials, "randomized trials per component");

  CLI::App* report = app.add_subcommand("report", "aggregate run reports into tables");
  report->add_option("runs", run_dirs, "run directories")->required();
  report->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (synth->parsed()) return finish(simmil_synth_bags(config.c_str(), out.c_str(), seed));
  if (pretrain->parsed())
    return finish(simmil_pretrain(config.c_str(), data.c_str(), out.c_str(), seed));
  if (pretrain_surv->parsed())
    return finish(simmil_pretrain_survival(config.c_str(), data.c_str(), out.c_str(), seed));
  if (pretrain_con->parsed())
    return finish(simmil_pretrain_contrastive(config.c_str(), data.c_str(), out.c_str(), seed));
  if (cont->parsed())
    return finish(simmil_continue_pretrain(config.c_str(), ckpt.c_str(), data.c_str(),
                                           out.c_str(), seed));
  if (extract->parsed())
    return finish(simmil_extract(config.c_str(), ckpt.c_str(), data.c_str(), out.c_str()));
  if (train_agg->parsed())
    return finish(simmil_train_aggregator(config.c_str(), features.c_str(), agg.c_str(),
                                          out.c_str(), seed));
  if (eval_inst->parsed())
    return finish(simmil_eval_instance(config.c_str(), ckpt.c_str(), data.c_str(), out.c_str(),
                                       seed));
  if (gradcheck->parsed()) {
    double max_rel_err = 0.0;
    const simmil_status st =
        simmil_gradcheck(trials, seed, out.empty() ? nullptr : out.c_str(), &max_rel_err);
    std::printf("gradcheck: max relative error %.3g (%s)\n", max_rel_err,
                st == SIMMIL_OK ? "pass" : "FAIL");
    return finish(st);
  }
  if (report->parsed()) {
    std::vector<const char*> ptrs;
    for (const auto& d : run_dirs) ptrs.push_back(d.c_str());
    return finish(simmil_report(ptrs.data(), ptrs.size(), out.c_str()));
  }
  return 2;
}
