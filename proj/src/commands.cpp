#include <fstream>
#include <stdexcept>

#include "divdir/checkpoint.hpp"
#include "divdir/config.hpp"

namespace divdir {

const char* const kAttackResultsHeader =
    "model_id,name,attack,norm,eps,alpha,steps,random_start,draws,accuracy,examples";

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void check_layout(const Dataset& d, const NetworkSpec& spec, const std::string& what) {
  if (d.features() != spec.input_size() || d.classes != spec.classes()) {
    throw std::invalid_argument(what + " has " + std::to_string(d.features()) + " features / " +
                                std::to_string(d.classes) + " classes; the network expects " +
                                std::to_string(spec.input_size()) + " / " + std::to_string(spec.classes()));
  }
}

Dataset load_test(const RunConfig& c) {
  Dataset d = c.test_data->load();
  return c.eval.limit ? d.head(*c.eval.limit) : d;
}

std::string attack_row(const std::string& id, const NamedAttack& a, double accuracy, std::size_t examples) {
  const auto& k = a.attack;
  return id + "," + a.name + "," + attack_kind(k) + "," + to_string(k.norm) + "," + format_number(k.eps_max) + "," +
         format_number(k.alpha) + "," + std::to_string(k.steps) + "," + (k.random_start ? "1" : "0") + "," +
         std::to_string(k.draws_for_gradient) + "," + format_number(accuracy) + "," + std::to_string(examples);
}

// Standard accuracy plus every configured attack on `test`; writes attacks.csv.
nlohmann::json evaluate_all(const RunConfig& c, const BayesianNetwork& net, const Dataset& test, const std::string& id,
                            const std::filesystem::path& dir, const Logger& log) {
  nlohmann::json out;
  out["model_id"] = id;
  out["examples"] = test.size();
  out["standard_accuracy"] = standard_accuracy(test, net, c.seed, c.eval.predict_draws, c.eval.batch_size);
  if (log) log("standard accuracy " + format_number(out["standard_accuracy"].get<double>()));
  std::string csv = std::string(kAttackResultsHeader) + "\n";
  out["attacks"] = nlohmann::json::object();
  for (const auto& a : c.attacks) {
    Dataset adv;
    const auto ev = evaluate_attack(test, net, a.attack, c.seed, c.eval.predict_draws, c.eval.batch_size,
                                    c.save_adversarial ? &adv : nullptr);
    if (c.save_adversarial) save_adversarial(dir / ("adv_" + a.name + ".bin"), adv, a.attack, {{"model_id", id}});
    csv += attack_row(id, a, ev.accuracy, ev.examples) + "\n";
    out["attacks"][a.name] = ev.accuracy;
    if (log) log(a.name + " accuracy " + format_number(ev.accuracy));
  }
  if (!c.attacks.empty()) write_text(dir / "attacks.csv", csv);
  return out;
}

nlohmann::json run_train(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  const Dataset data = c.train_data->load();
  check_layout(data, c.network, "data.train");
  std::optional<Dataset> test;
  if (c.test_data) {
    test = load_test(c);
    check_layout(*test, c.network, "data.test");
  }
  TrainOptions opts;
  opts.monitor = test ? &*test : nullptr;
  opts.monitor_examples = c.monitor.examples;
  opts.monitor_attacks = std::vector<AttackMetric>();
  for (const auto& a : c.monitor.attacks) opts.monitor_attacks.push_back({a.name, a.attack, 0.0});
  opts.attack_every = c.monitor.attack_every;
  opts.out_dir = dir;
  opts.log = log;
  TrainResult res = train(data, c.network, c.train, opts);

  nlohmann::json s;
  const auto& last = res.history.back();
  s["epochs"] = res.history.size();
  s["final"] = {{"loss", last.loss},
                {"nll", last.nll},
                {"train_accuracy", last.train_accuracy},
                {"monitor_accuracy", last.monitor_accuracy}};
  s["checkpoint"] = (dir / "checkpoint.bin").string();
  if (test) s["test"] = evaluate_all(c, res.net, *test, model_id(dir / "checkpoint.bin"), dir, log);
  return s;
}

nlohmann::json run_attack(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  const BayesianNetwork net = load_checkpoint(c.checkpoint);
  const Dataset test = load_test(c);
  check_layout(test, net.spec(), "data.test");
  return evaluate_all(c, net, test, model_id(c.checkpoint), dir, log);
}

nlohmann::json run_sweep(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  const BayesianNetwork net = load_checkpoint(c.checkpoint);
  const Dataset test = load_test(c);
  check_layout(test, net.spec(), "data.test");
  const auto res = sweep(test, net, c.sweep, model_id(c.checkpoint), c.seed, c.eval.predict_draws, c.eval.batch_size);
  write_sweep_csv(dir / "sweep.csv", res);
  nlohmann::json s;
  s["model_id"] = res.rows.front().model_id;
  s["rows"] = nlohmann::json::array();
  bool monotone = true;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const auto& r = res.rows[i];
    s["rows"].push_back({{"eps", r.eps}, {"accuracy", r.accuracy}});
    if (log) log(r.attack + " " + to_string(r.norm) + " eps " + format_number(r.eps) + ": " + format_number(r.accuracy));
    if (i > 0 && r.accuracy > res.rows[i - 1].accuracy) monotone = false;
  }
  s["non_increasing"] = monotone;
  return s;
}

nlohmann::json run_gen_offline(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  const Dataset data = c.train_data->load();
  check_layout(data, c.network, "data.train");
  const auto path = dir / "offline_augmented.bin";
  const auto res = build_offline_adversaries(data, c.network, c.train, path, log);
  return {{"augmented", path.string()},
          {"examples", res.augmented.size()},
          {"appended", res.appended},
          {"twin_clean_accuracy", res.twin_clean_accuracy},
          {"twin_adversarial_accuracy", res.twin_adversarial_accuracy}};
}

nlohmann::json run_gen_data(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  nlohmann::json s;
  auto emit = [&](const DataSource& src, const std::string& name) {
    const Dataset d = src.load();
    const auto path = dir / (name + ".bin");
    save_dataset(path, d, {{"source", data_source_to_json(src)}});
    s[name] = {{"path", path.string()}, {"examples", d.size()}, {"features", d.features()}, {"classes", d.classes}};
    if (log) log("wrote " + path.string() + " (" + std::to_string(d.size()) + " examples)");
  };
  if (c.train_data) emit(*c.train_data, "train");
  if (c.test_data) emit(*c.test_data, "test");
  return s;
}

nlohmann::json run_verify(const RunConfig& c, const std::filesystem::path& dir, const Logger& log) {
  const auto reports = run_verify_suite(c.verify);
  write_text(dir / "verify.csv", verify_csv(reports));
  if (log) log(verify_summary(reports));
  nlohmann::json s;
  s["passed"] = all_passed(reports);
  s["checks"] = nlohmann::json::array();
  for (const auto& r : reports)
    s["checks"].push_back({{"name", r.name}, {"status", to_string(r.status)}, {"measured", r.measured}});
  return s;
}

}  // namespace

nlohmann::json run_command(const RunConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto dir = resolve_run_dir(cfg);
  if (std::filesystem::exists(dir / "config.json"))
    throw std::invalid_argument("run directory " + dir.string() + " is already in use");
  std::filesystem::create_directories(dir);
  auto echo = run_to_json(cfg);
  echo["run_dir"] = dir.string();
  write_text(dir / "config.json", echo.dump(2) + "\n");

  nlohmann::json summary;
  switch (cfg.command) {
    case Command::train: summary = run_train(cfg, dir, log); break;
    case Command::attack: summary = run_attack(cfg, dir, log); break;
    case Command::sweep: summary = run_sweep(cfg, dir, log); break;
    case Command::gen_offline: summary = run_gen_offline(cfg, dir, log); break;
    case Command::gen_data: summary = run_gen_data(cfg, dir, log); break;
    case Command::verify: summary = run_verify(cfg, dir, log); break;
  }
  summary["command"] = to_string(cfg.command);
  summary["run_dir"] = dir.string();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace divdir
