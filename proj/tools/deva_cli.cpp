#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "deva/data.hpp"
#include "deva/edg.hpp"
#include "deva/errors.hpp"
#include "deva/train.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

deva::TrainConfig load_config(const std::string& path, bool paper_scale) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : deva::read_json_file(path);
  if (paper_scale && !j.contains("profile")) j["profile"] = "paper";
  return deva::TrainConfig::from_json(j);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_warnings(const deva::Dataset& d) {
  for (const auto& w : d.warnings) {
    std::cerr << "warning: " << w.file;
    if (w.line) std::cerr << ':' << w.line;
    std::cerr << ": " << w.message << '\n';
  }
  std::cerr << "loaded " << d.train.size() << " train / " << d.valid.size() << " valid / "
            << d.test.size() << " test utterances";
  if (d.skipped) std::cerr << " (" << d.skipped << " skipped)";
  std::cerr << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw deva::DataError("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Description-enhanced multimodal sentiment model: data, training and evaluation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a seeded synthetic dataset");
  std::string spec_file, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--spec", spec_file, "Synthetic spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  // edg
  auto* edg_cmd = app.add_subcommand("edg", "Print the AED/VED descriptions of one utterance as JSON");
  std::string au_file, prosody_file, tertile_file, ved_template, lexicon_file;
  std::size_t k = 4;
  double threshold = deva::edg::kDefaultAuThreshold;
  edg_cmd->add_option("--au-file", au_file, "AU track CSV")->check(CLI::ExistingFile);
  edg_cmd->add_option("--prosody-file", prosody_file, "Prosody CSV")->check(CLI::ExistingFile);
  edg_cmd->add_option("--tertiles", tertile_file, "Fitted tertile table JSON")->check(CLI::ExistingFile);
  edg_cmd->add_option("--k", k, "Number of AUs to describe")->check(CLI::PositiveNumber);
  edg_cmd->add_option("--template", ved_template, "VED template with one {phrases} slot");
  edg_cmd->add_option("--lexicon", lexicon_file, "Lexicon override JSON")->check(CLI::ExistingFile);
  edg_cmd->add_option("--au-threshold", threshold, "Intensity above which an AU is active");

  // fit-tertiles
  auto* fit = app.add_subcommand("fit-tertiles", "Fit prosody tertiles on a dataset directory");
  std::string fit_data, fit_out, fit_scope = "train";
  fit->add_option("--data", fit_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  fit->add_option("--out", fit_out, "Output JSON (stdout when omitted)");
  fit->add_option("--scope", fit_scope, "train or all")->check(CLI::IsMember({"train", "all"}));

  // train
  auto* train = app.add_subcommand("train", "Train a model and save a checkpoint");
  std::string config_file, data_dir, ckpt_out, resume_from, metrics_out;
  bool paper_scale = false;
  train->add_option("--config", config_file, "Config JSON (desk defaults when omitted)")->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ckpt_out, "Checkpoint path")->required();
  train->add_option("--resume", resume_from, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--metrics-out", metrics_out, "Write the run report JSON here");
  train->add_flag("--paper-scale", paper_scale, "Use d=128, batch 64, 80 epochs");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the test split");
  std::string eval_ckpt, eval_data;
  bool fine = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_flag("--fine-grained", fine, "Also report per label interval");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train the base model and each ablation with the same seed");
  std::string abl_config, abl_data, toggles, csv_out;
  bool abl_paper = false;
  abl->add_option("--config", abl_config, "Base config JSON")->check(CLI::ExistingFile);
  abl->add_option("--data", abl_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  abl->add_option("--toggles", toggles, "Comma-separated: no_aed,no_ved,no_raw_av,no_ceu,no_mfu,no_edg,no_fusion_layer");
  abl->add_option("--csv", csv_out, "Also write the table as CSV");
  abl->add_flag("--paper-scale", abl_paper, "Use d=128, batch 64, 80 epochs");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every model parameter");
  std::string gc_config;
  double gc_h = 1e-4, gc_tol = 1e-3;
  gc->add_option("--config", gc_config, "Config JSON")->check(CLI::ExistingFile);
  gc->add_option("--step", gc_h, "Central-difference step");
  gc->add_option("--tol", gc_tol, "Relative error tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      auto spec = spec_file.empty() ? deva::SyntheticSpec{}
                                    : deva::SyntheticSpec::from_json(deva::read_json_file(spec_file));
      if (gen->count("--seed")) spec.seed = gen_seed;
      const auto report = deva::generate_synthetic(spec, gen_out);
      std::cout << nlohmann::json{{"samples", report.samples}, {"probe_acc2", report.probe_acc2}, {"out", gen_out}}.dump()
                << '\n';
    } else if (*edg_cmd) {
      if (au_file.empty() && prosody_file.empty()) throw deva::ConfigError("edg: give --au-file and/or --prosody-file");
      auto lex = lexicon_file.empty() ? deva::edg::DescriptionLexicon::defaults()
                                      : deva::edg::DescriptionLexicon::from_json(deva::read_json_file(lexicon_file));
      nlohmann::json out = nlohmann::json::object();
      if (!prosody_file.empty()) {
        if (tertile_file.empty()) throw deva::ConfigError("edg: --prosody-file needs --tertiles");
        const auto table = deva::edg::TertileTable::from_json(deva::read_json_file(tertile_file));
        const auto p = deva::edg::read_prosody_csv(prosody_file);
        for (const auto& w : p.warnings) std::cerr << "warning: " << w.file << ':' << w.line << ": " << w.message << '\n';
        out["aed"] = deva::edg::generate_aed(p.series, table, lex);
      }
      if (!au_file.empty()) {
        const auto a = deva::edg::read_au_csv(au_file, threshold);
        for (const auto& w : a.warnings) std::cerr << "warning: " << w.file << ':' << w.line << ": " << w.message << '\n';
        const auto top = deva::edg::select_top_k(deva::edg::detect_candidates(a.track), k);
        out["ved"] = deva::edg::generate_ved(top, lex, ved_template);
        nlohmann::json aus = nlohmann::json::array();
        for (auto au : top) aus.push_back(std::string(deva::edg::au_name(au)));
        out["aus"] = aus;
      }
      std::cout << out.dump() << '\n';
    } else if (*fit) {
      const auto data = deva::ingest(fit_data);
      print_warnings(data);
      std::vector<deva::edg::ProsodyAggregate> corpus;
      auto add = [&](const std::vector<deva::Utterance>& split) {
        for (const auto& u : split) corpus.push_back(deva::edg::aggregate_prosody(u.prosody));
      };
      add(data.train);
      if (fit_scope == "all") {
        add(data.valid);
        add(data.test);
      }
      const auto text = deva::edg::fit_tertiles(corpus).to_json().dump(2) + "\n";
      if (fit_out.empty()) {
        std::cout << text;
      } else {
        write_text(fit_out, text);
      }
    } else if (*train) {
      const auto data = deva::ingest(data_dir);
      print_warnings(data);
      deva::RunResult result;
      if (!resume_from.empty()) {
        const auto ckpt = deva::load_checkpoint(resume_from);
        const auto cfg = deva::config_from_checkpoint(ckpt);
        const auto pre = deva::preprocessor_from_checkpoint(ckpt);
        const auto prepared = pre.prepare(data);
        auto session = deva::resume_session(ckpt, prepared);
        session->set_log(&std::cerr);
        session->run();
        deva::save_checkpoint(session->checkpoint(), ckpt_out);
        std::vector<double> labels;
        for (const auto& s : prepared.test) labels.push_back(s.label);
        result.history = session->history();
        result.best_epoch = session->best_epoch();
        result.parameters = session->parameter_count();
        if (!prepared.test.empty())
          result.test = deva::compute_metrics(session->predict(prepared.test, true), labels, cfg.label_range);
      } else {
        result = deva::train_and_evaluate(load_config(config_file, paper_scale), data, &std::cerr, ckpt_out);
      }
      const auto report = result.to_json();
      std::cout << nlohmann::json{{"checkpoint", ckpt_out}, {"best_epoch", result.best_epoch},
                                  {"parameters", result.parameters}, {"test", report.at("test")}}
                       .dump()
                << '\n';
      if (!metrics_out.empty()) write_text(metrics_out, report.dump(2) + "\n");
    } else if (*eval) {
      const auto ckpt = deva::load_checkpoint(eval_ckpt);
      const auto cfg = deva::config_from_checkpoint(ckpt);
      const auto data = deva::ingest(eval_data);
      print_warnings(data);
      if (data.test.empty()) throw deva::DataError("test split is empty");
      const auto preds = deva::predict_checkpoint(ckpt, data);
      std::vector<double> labels;
      for (const auto& u : data.test) labels.push_back(u.label);
      nlohmann::json out{{"checkpoint", eval_ckpt},
                         {"epoch", ckpt.meta.value("epoch", 0)},
                         {"best_epoch", ckpt.meta.value("best_epoch", 0)},
                         {"test", deva::compute_metrics(preds, labels, cfg.label_range).to_json()}};
      if (fine) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : deva::fine_grained_eval(preds, labels, cfg.label_range)) rows.push_back(r.to_json());
        out["fine_grained"] = rows;
      }
      std::cout << out.dump(2) << '\n';
    } else if (*abl) {
      const auto cfg = load_config(abl_config, abl_paper);
      const auto list = split_list(toggles);
      for (const auto& t : list) deva::apply_toggles(cfg, {t});
      const auto data = deva::ingest(abl_data);
      print_warnings(data);
      const auto rows = deva::ablate(cfg, data, list, &std::cerr);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : rows)
        out.push_back({{"variant", r.name}, {"parameters", r.result.parameters}, {"test", r.result.test.to_json()}});
      std::cout << out.dump(2) << '\n';
      if (!csv_out.empty()) write_text(csv_out, deva::ablation_csv(rows));
    } else if (*gc) {
      auto cfg = load_config(gc_config, false);
      const auto report = deva::model_grad_check(cfg, gc_h, gc_tol);
      for (const auto& e : report.entries) {
        std::printf("%-48s n=%-6zu max_rel=%.3e %s", e.name.c_str(), e.numel, e.max_rel_error,
                    e.passed ? "ok" : "FAIL");
        if (!e.passed)
          std::printf(" [%zu] analytic=%.9e numeric=%.9e", e.worst_index, e.analytic, e.numeric);
        std::printf("\n");
      }
      std::printf("max relative error %.3e (tol %.1e): %s\n", report.max_rel_error, report.tol,
                  report.passed ? "PASS" : "FAIL");
      return report.passed ? 0 : kExitNumeric;
    }
  } catch (const deva::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const deva::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const deva::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
