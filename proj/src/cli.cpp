#include "sliceforge/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sliceforge/error.hpp"
#include "sliceforge/experiment.hpp"

namespace sliceforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Command-line overrides for the experiment config. Each is applied only when
// the flag was given.
struct Overrides {
  std::string config, manifest, output;
  std::size_t k = 0, epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::string granularity;
  bool stratified = false, allow_leakage = false;
  CLI::Option *o_manifest = nullptr, *o_output = nullptr, *o_k = nullptr, *o_epochs = nullptr,
              *o_batch = nullptr, *o_seed = nullptr, *o_lr = nullptr, *o_gran = nullptr, *o_strat = nullptr,
              *o_leak = nullptr;

  void attach(CLI::App* sub) {
    sub->add_option("-c,--config", config, "experiment config JSON");
    o_manifest = sub->add_option("--manifest", manifest, "dataset manifest");
    o_output = sub->add_option("-o,--out", output, "output directory");
    o_k = sub->add_option("--k", k, "number of folds");
    o_seed = sub->add_option("--seed", seed, "split and training seed");
    o_epochs = sub->add_option("--epochs", epochs);
    o_batch = sub->add_option("--batch-size", batch_size);
    o_lr = sub->add_option("--lr", lr, "initial learning rate");
    o_gran = sub->add_option("--granularity", granularity, "subject or slice");
    o_strat = sub->add_flag("--stratified,!--no-stratified", stratified);
    o_leak = sub->add_flag("--allow-leakage", allow_leakage, "train even when the split leaks subjects");
  }

  // config file < SLICEFORGE_SEED < command line
  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config.empty()) c = load_experiment_config(config);
    apply_seed_env(c);
    if (*o_manifest) c.manifest_path = manifest;
    if (*o_output) c.output_dir = output;
    if (*o_k) c.split.k = k;
    if (*o_seed) c.split.seed = c.train.seed = seed;
    if (*o_epochs) c.train.epochs = epochs;
    if (*o_batch) c.train.batch_size = batch_size;
    if (*o_lr) c.train.initial_lr = lr;
    if (*o_gran) c.split.granularity = parse_granularity(granularity);
    if (*o_strat) c.split.stratified = stratified;
    if (*o_leak) c.allow_leakage = allow_leakage;
    return c;
  }
};

std::uint64_t seed_or_env(const CLI::Option* opt, std::uint64_t value) {
  if (*opt) return value;
  ExperimentConfig c;
  c.train.seed = value;
  apply_seed_env(c);
  return c.train.seed;
}

Tensor as_model_input(const Tensor& t) {
  const Shape& s = t.shape();
  switch (s.rank()) {
    case 2: return t.reshaped(Shape{1, 1, s[0], s[1]});
    case 3: return t.reshaped(Shape{1, s[0], s[1], s[2]});
    case 4:
      if (s[0] != 1) throw InvalidArgument("inspect takes a single input, got batch " + s.to_string());
      return t;
    default: throw InvalidArgument("inspect input must be [H,W], [C,H,W] or [1,C,H,W], got " + s.to_string());
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sliceforge: slice-stack classifier training and cross-validation", "sliceforge"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  std::string gen_out;
  std::size_t per_class = 8, negatives = 0, positives = 0, slices = 4, height = 16, width = 16;
  std::uint64_t gen_seed = 0;
  gen->add_option("-o,--out", gen_out, "output directory")->required();
  auto* o_per = gen->add_option("--per-class", per_class, "subjects per class");
  auto* o_neg = gen->add_option("--negatives", negatives, "label-0 subjects")->excludes(o_per);
  auto* o_pos = gen->add_option("--positives", positives, "label-1 subjects")->excludes(o_per);
  o_neg->needs(o_pos);
  o_pos->needs(o_neg);
  gen->add_option("--slices", slices, "slices per subject");
  gen->add_option("--height", height);
  gen->add_option("--width", width);
  auto* o_gen_seed = gen->add_option("--seed", gen_seed);

  // split
  auto* split = app.add_subcommand("split", "compute a k-fold split plan");
  std::string split_manifest, split_out, split_gran = "subject";
  std::size_t split_k = 2;
  std::uint64_t split_seed = 0;
  bool split_strat = false;
  split->add_option("--manifest", split_manifest)->required();
  split->add_option("-o,--out", split_out, "split JSON path")->required();
  split->add_option("--k", split_k);
  auto* o_split_seed = split->add_option("--seed", split_seed);
  auto* o_split_strat = split->add_flag("--stratified,!--no-stratified", split_strat);
  split->add_option("--granularity", split_gran, "subject or slice");

  // audit
  auto* audit = app.add_subcommand("audit", "leakage, imbalance and demographics audit of a split");
  std::string audit_manifest, audit_split_path, audit_json;
  audit->add_option("--manifest", audit_manifest)->required();
  audit->add_option("--split", audit_split_path)->required();
  audit->add_option("--json", audit_json, "also write the report as JSON");

  // train / run
  auto* train = app.add_subcommand("train", "train and evaluate a single fold");
  Overrides train_ov;
  train_ov.attach(train);
  std::size_t train_fold = 1;
  train->add_option("--fold", train_fold, "1-based fold index");
  auto* run = app.add_subcommand("run", "full cross-validation experiment");
  Overrides run_ov;
  run_ov.attach(run);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "evaluate a model file");
  std::string eval_model, eval_manifest, eval_split, eval_out;
  std::size_t eval_fold = 1;
  double eval_threshold = -1.0;
  eval->add_option("--model", eval_model)->required();
  eval->add_option("--manifest", eval_manifest)->required();
  auto* o_eval_split = eval->add_option("--split", eval_split, "evaluate the validation side of this split");
  eval->add_option("--fold", eval_fold, "1-based fold index")->needs(o_eval_split);
  auto* o_thr = eval->add_option("--threshold", eval_threshold, "decision threshold (default: model's)");
  eval->add_option("-o,--out", eval_out, "write metrics JSON");

  // report
  auto* report = app.add_subcommand("report", "render tables from a completed run directory");
  std::string report_dir;
  report->add_option("run_dir", report_dir)->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "activation maps and activation maximization");
  std::string ins_model, ins_input, ins_mode = "activation", ins_out;
  std::size_t ins_block = 0, ins_channel = 0;
  int ins_steps = 20;
  double ins_step = 0.1, ins_ceiling = 255.0;
  std::uint64_t ins_seed = 0;
  inspect->add_option("--model", ins_model)->required();
  inspect->add_option("--mode", ins_mode)->check(CLI::IsMember({"activation", "maximize"}));
  inspect->add_option("--input", ins_input, "TSR1 input slice (activation mode)");
  inspect->add_option("--block", ins_block);
  inspect->add_option("--channel", ins_channel);
  inspect->add_option("--steps", ins_steps);
  inspect->add_option("--step-size", ins_step);
  auto* o_ins_seed = inspect->add_option("--seed", ins_seed);
  inspect->add_option("--ceiling", ins_ceiling, "input intensity ceiling; 0 feeds the input unscaled");
  inspect->add_option("-o,--out", ins_out, "output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      const std::uint64_t seed = seed_or_env(o_gen_seed, gen_seed);
      const DatasetManifest m =
          *o_neg ? generate_synthetic_counts(negatives, positives, slices, height, width, seed, gen_out)
                 : generate_synthetic(per_class, slices, height, width, seed, gen_out);
      out << "wrote " << m.subjects.size() << " subjects, " << m.total_slices() << " slices to "
          << (fs::path(gen_out) / "manifest.json").string() << '\n';
    } else if (*split) {
      const DatasetManifest m = load_manifest(split_manifest);
      const bool strat = *o_split_strat ? split_strat : is_imbalanced(m);
      const SplitPlan plan =
          kfold_split(m, split_k, seed_or_env(o_split_seed, split_seed), strat, parse_granularity(split_gran));
      save_split(split_out, plan);
      out << "wrote " << plan.k << "-fold " << to_string(plan.granularity) << " split"
          << (plan.stratified ? " (stratified)" : "") << " to " << split_out << '\n';
    } else if (*audit) {
      const DatasetManifest m = load_manifest(audit_manifest);
      const AuditReport r = audit_split(load_split(audit_split_path), m);
      out << render_audit_table(r);
      if (!audit_json.empty()) {
        std::ofstream f(audit_json, std::ios::binary);
        if (!f) throw IoError("cannot write " + audit_json);
        f << audit_to_json(r).dump(2) << '\n';
      }
    } else if (*train) {
      const ExperimentConfig c = train_ov.resolve();
      c.validate();
      const DatasetManifest m = load_manifest(c.manifest_path);
      const SplitPlan plan = plan_split(c, m);
      enforce_leakage_guard(audit_split(plan, m), c.allow_leakage);
      if (train_fold < 1) throw InvalidArgument("--fold is 1-based");
      fs::create_directories(c.output_dir);
      save_split(c.output_dir / "split.json", plan);
      run_fold(c, m, plan, train_fold - 1, &out);
    } else if (*run) {
      const ExperimentConfig c = run_ov.resolve();
      run_experiment(c, &out);
      out << build_report(c.output_dir).markdown;
    } else if (*eval) {
      const Model model = load_model(eval_model);
      const DatasetManifest m = load_manifest(eval_manifest);
      std::vector<std::string> ids;
      Granularity g = Granularity::kSubject;
      if (*o_eval_split) {
        const SplitPlan plan = load_split(eval_split);
        if (eval_fold < 1 || eval_fold > plan.folds.size()) throw InvalidArgument("--fold out of range");
        ids = plan.folds[eval_fold - 1].val_ids;
        g = plan.granularity;
      } else {
        for (const auto& s : m.subjects) ids.push_back(s.subject_id);
      }
      const SampleSet data = load_samples(m, ids, g);
      const double thr = *o_thr ? eval_threshold : model.config.threshold;
      const EvalResult r = evaluate(model, data, thr);
      const ConfusionCounts subj = subject_vote_counts(data, r.probs, thr);
      const json j{{"mean_loss", r.mean_loss},
                   {"slice", json{{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn},
                                  {"metrics", metrics_to_json(compute_metrics(r.counts))}}},
                   {"subject", json{{"tp", subj.tp}, {"fp", subj.fp}, {"tn", subj.tn}, {"fn", subj.fn},
                                    {"metrics", metrics_to_json(compute_metrics(subj))}}}};
      out << j.dump(2) << '\n';
      if (!eval_out.empty()) {
        std::ofstream f(eval_out, std::ios::binary);
        if (!f) throw IoError("cannot write " + eval_out);
        f << j.dump(2) << '\n';
      }
    } else if (*report) {
      write_report(report_dir);
      out << build_report(report_dir).markdown;
    } else if (*inspect) {
      const Model model = load_model(ins_model);
      if (ins_mode == "activation") {
        if (ins_input.empty()) throw InvalidArgument("activation mode needs --input");
        Tensor x = tensor_read(ins_input);
        if (ins_ceiling > 0.0) x = scale_normalize(x, ins_ceiling);
        const Tensor map = extract_activation(model, as_model_input(x), ins_block, ins_channel);
        tensor_write(ins_out + ".tsr", map);
        write_pgm(ins_out + ".pgm", map);
        out << "activation block " << ins_block << " channel " << ins_channel << ' ' << map.shape().to_string()
            << " -> " << ins_out << ".tsr\n";
      } else {
        const MaximizeResult r = maximize_activation(model, ins_block, ins_channel, ins_steps, ins_step,
                                                     seed_or_env(o_ins_seed, ins_seed));
        tensor_write(ins_out + ".tsr", r.image);
        const Shape& s = r.image.shape();
        Tensor plane(Shape{s[2], s[3]});
        std::copy_n(r.image.data().begin(), plane.size(), plane.data().begin());
        write_pgm(ins_out + ".pgm", plane);
        std::ofstream trace(ins_out + "_trace.csv", std::ios::binary);
        if (!trace) throw IoError("cannot write " + ins_out + "_trace.csv");
        trace << "step,objective\n";
        char buf[64];
        for (std::size_t i = 0; i < r.objective_trace.size(); ++i) {
          std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, r.objective_trace[i]);
          trace << buf;
        }
        out << "objective " << r.objective_trace.front() << " -> " << r.objective_trace.back() << '\n';
      }
    }
  } catch (const LeakageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitLeakage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace sliceforge
