#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "borderflow/run.hpp"

using namespace borderflow;

int main(int argc, char** argv) {
  CLI::App app{"Open-set recognition with flow-generated outliers"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, mode, temps;
  std::uint64_t seed = 0;
  bool corrupt = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "overrides the configured seed");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--mode", mode, "imagewide or dense")->check(CLI::IsMember({"imagewide", "dense"}));
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate a training and evaluation corpus");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "joint training; --checkpoint resumes");
  add_common(train);
  train->add_option("--checkpoint", checkpoint, "resume from this checkpoint")->check(CLI::ExistingFile);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the evaluation split");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--temps", temps, "comma separated softmax temperatures, e.g. \"1,2,10\"");
  CLI::App* sample = app.add_subcommand("sample", "write flow samples as PPM images");
  add_common(sample);
  sample->add_option("--checkpoint", checkpoint, "checkpoint with a flow")->required()->check(CLI::ExistingFile);
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference checks of the training losses");
  grad->add_option("--out", out_dir, "directory for gradcheck.txt");
  grad->add_flag("--corrupt-gradient", corrupt, "perturb analytic gradients (the check must fail)");

  CLI11_PARSE(app, argc, argv);

  CommandOptions opt;
  opt.out = out_dir;
  opt.log = &std::cout;
  if (!checkpoint.empty()) opt.checkpoint = checkpoint;
  if (grad->parsed()) return cmd_gradcheck(opt, corrupt);

  RunConfig config;
  try {
    KeyValues kv = config_path.empty() ? KeyValues{} : read_key_values(config_path);
    if (!mode.empty()) kv["mode"] = mode;
    if (seed != 0 || app.get_subcommands().front()->count("--seed")) kv["seed"] = std::to_string(seed);
    if (!temps.empty()) kv["eval.temperatures"] = temps;
    config = RunConfig::from_key_values(kv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  if (gen->parsed()) return cmd_gen_data(config, opt);
  if (train->parsed()) return cmd_train(config, opt);
  if (eval->parsed()) return cmd_eval(config, opt);
  return cmd_sample(config, opt);
}
