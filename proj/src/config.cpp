#include "divdir/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "divdir/checkpoint.hpp"

namespace divdir {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, _] : j.items())
    if (!allowed.contains(k)) throw std::invalid_argument(where + ": unknown key '" + k + "'");
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::invalid_argument(what + " is not set");
  if (!std::filesystem::is_regular_file(path)) throw std::invalid_argument(what + " not found: " + path);
}

nlohmann::json attacks_to_json(const std::vector<NamedAttack>& v) {
  auto a = nlohmann::json::array();
  for (const auto& n : v) a.push_back({{"name", n.name}, {"attack", attack_to_json(n.attack)}});
  return a;
}

std::vector<NamedAttack> attacks_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw std::invalid_argument(where + ": expected an array");
  std::vector<NamedAttack> out;
  for (const auto& e : j) {
    reject_unknown(e, {"name", "attack"}, where + "[]");
    out.push_back({e.at("name").get<std::string>(), attack_from_json(e.at("attack"))});
  }
  return out;
}

void validate_attacks(const std::vector<NamedAttack>& v, const std::string& where) {
  std::set<std::string> seen;
  for (const auto& a : v) {
    if (a.name.empty() || a.name.find_first_of(",\"\n/") != std::string::npos)
      throw std::invalid_argument(where + ": attack names must be non-empty and free of , \" / and newlines");
    if (!seen.insert(a.name).second) throw std::invalid_argument(where + ": duplicate attack name '" + a.name + "'");
    a.attack.validate();
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data sources

void DataSource::validate(const std::string& where) const {
  if (limit && *limit == 0) throw std::invalid_argument(where + ".limit must be positive");
  if (kind == Kind::synthetic && offset >= count) throw std::invalid_argument(where + ".offset must be below count");
  switch (kind) {
    case Kind::idx:
      require_file(images, where + ".images");
      require_file(labels, where + ".labels");
      break;
    case Kind::synthetic:
      if (count == 0 || features == 0 || classes == 0)
        throw std::invalid_argument(where + ": count, features and classes must be >= 1");
      if (!(margin >= 0.0)) throw std::invalid_argument(where + ".margin must be >= 0");
      break;
    case Kind::container:
      require_file(path, where + ".path");
      break;
  }
}

Dataset DataSource::load() const {
  Dataset d;
  switch (kind) {
    case Kind::idx:
      d = load_idx(images, labels, limit ? std::optional<std::size_t>(offset + *limit) : std::nullopt);
      break;
    case Kind::synthetic: d = gen_synthetic(count, features, classes, seed, margin); break;
    case Kind::container: d = load_dataset(path); break;
  }
  if (offset == 0 && (!limit || *limit >= d.size())) return d;
  if (offset >= d.size()) throw std::invalid_argument("data offset " + std::to_string(offset) + " is past the end");
  const std::size_t end = limit ? std::min(d.size(), offset + *limit) : d.size();
  std::vector<std::size_t> idx(end - offset);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = offset + i;
  return d.subset(idx);
}

nlohmann::json data_source_to_json(const DataSource& d) {
  nlohmann::json j;
  switch (d.kind) {
    case DataSource::Kind::idx: j = {{"kind", "idx"}, {"images", d.images}, {"labels", d.labels}}; break;
    case DataSource::Kind::synthetic:
      j = {{"kind", "synthetic"}, {"count", d.count}, {"features", d.features},
           {"classes", d.classes}, {"seed", d.seed},   {"margin", d.margin}};
      break;
    case DataSource::Kind::container: j = {{"kind", "container"}, {"path", d.path}}; break;
  }
  j["offset"] = d.offset;
  j["limit"] = d.limit ? nlohmann::json(*d.limit) : nlohmann::json(nullptr);
  return j;
}

DataSource data_source_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("kind")) throw std::invalid_argument(where + ": expected an object with \"kind\"");
  DataSource d;
  const auto kind = j["kind"].get<std::string>();
  d.offset = j.value("offset", d.offset);
  if (j.contains("limit") && !j["limit"].is_null()) d.limit = j["limit"].get<std::size_t>();
  if (kind == "idx") {
    reject_unknown(j, {"kind", "images", "labels", "offset", "limit"}, where);
    d.kind = DataSource::Kind::idx;
    d.images = j.value("images", std::string());
    d.labels = j.value("labels", std::string());
  } else if (kind == "synthetic") {
    reject_unknown(j, {"kind", "count", "features", "classes", "seed", "margin", "offset", "limit"}, where);
    d.kind = DataSource::Kind::synthetic;
    d.count = j.value("count", d.count);
    d.features = j.value("features", d.features);
    d.classes = j.value("classes", d.classes);
    d.seed = j.value("seed", d.seed);
    d.margin = j.value("margin", d.margin);
  } else if (kind == "container") {
    reject_unknown(j, {"kind", "path", "offset", "limit"}, where);
    d.kind = DataSource::Kind::container;
    d.path = j.value("path", std::string());
  } else {
    throw std::invalid_argument(where + ": unknown kind '" + kind + "' (idx, synthetic, container)");
  }
  return d;
}

// ---------------------------------------------------------------------------
// RunConfig

std::string to_string(Command c) {
  switch (c) {
    case Command::train: return "train";
    case Command::attack: return "attack";
    case Command::sweep: return "sweep";
    case Command::gen_offline: return "gen-offline";
    case Command::verify: return "verify";
    case Command::gen_data: return "gen-data";
  }
  return "?";
}

Command command_from(const std::string& s) {
  for (auto c : {Command::train, Command::attack, Command::sweep, Command::gen_offline, Command::verify,
                 Command::gen_data})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown command '" + s + "'");
}

void RunConfig::validate() const {
  network.validate();
  train.validate();
  validate_attacks(attacks, "attacks");
  validate_attacks(monitor.attacks, "monitor.attacks");
  sweep.validate();
  verify.validate();
  if (eval.predict_draws == 0 || eval.batch_size == 0)
    throw std::invalid_argument("eval: predict_draws and batch_size must be >= 1");
  if (eval.limit && *eval.limit == 0) throw std::invalid_argument("eval.limit must be positive");
  if (monitor.examples == 0 || monitor.attack_every == 0)
    throw std::invalid_argument("monitor: examples and attack_every must be >= 1");
  if (train_data) train_data->validate("data.train");
  if (test_data) test_data->validate("data.test");

  switch (command) {
    case Command::train:
      if (!train_data) throw std::invalid_argument("train: data.train is required");
      break;
    case Command::attack:
      require_file(checkpoint, "checkpoint");
      if (!test_data) throw std::invalid_argument("attack: data.test is required");
      if (attacks.empty()) throw std::invalid_argument("attack: attacks list is empty");
      break;
    case Command::sweep:
      require_file(checkpoint, "checkpoint");
      if (!test_data) throw std::invalid_argument("sweep: data.test is required");
      break;
    case Command::gen_offline:
      if (!train_data) throw std::invalid_argument("gen-offline: data.train is required");
      if (!train.offline_adv) throw std::invalid_argument("gen-offline: train.offline_adv is required");
      break;
    case Command::gen_data:
      if (!train_data && !test_data) throw std::invalid_argument("gen-data: data.train or data.test is required");
      break;
    case Command::verify: break;
  }
}

nlohmann::json run_to_json(const RunConfig& c) {
  return {
      {"command", to_string(c.command)},
      {"run_dir", c.run_dir},
      {"seed", c.seed},
      {"data",
       {{"train", c.train_data ? data_source_to_json(*c.train_data) : nlohmann::json(nullptr)},
        {"test", c.test_data ? data_source_to_json(*c.test_data) : nlohmann::json(nullptr)}}},
      {"network", spec_to_json(c.network)},
      {"train", train_to_json(c.train)},
      {"attacks", attacks_to_json(c.attacks)},
      {"checkpoint", c.checkpoint},
      {"sweep", sweep_grid_to_json(c.sweep)},
      {"eval",
       {{"predict_draws", c.eval.predict_draws},
        {"batch_size", c.eval.batch_size},
        {"limit", c.eval.limit ? nlohmann::json(*c.eval.limit) : nlohmann::json(nullptr)}}},
      {"monitor",
       {{"examples", c.monitor.examples},
        {"attack_every", c.monitor.attack_every},
        {"attacks", attacks_to_json(c.monitor.attacks)}}},
      {"save_adversarial", c.save_adversarial},
      {"verify", verify_to_json(c.verify)},
  };
}

RunConfig run_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"command", "run_dir", "seed", "data", "network", "train", "attacks", "checkpoint", "sweep", "eval",
                  "monitor", "save_adversarial", "verify"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("command")) c.command = command_from(j["command"].get<std::string>());
    c.run_dir = j.value("run_dir", std::string());
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j["data"];
      reject_unknown(d, {"train", "test"}, "data");
      if (d.contains("train") && !d["train"].is_null()) c.train_data = data_source_from_json(d["train"], "data.train");
      if (d.contains("test") && !d["test"].is_null()) c.test_data = data_source_from_json(d["test"], "data.test");
    }
    if (j.contains("network")) c.network = spec_from_json(j["network"]);
    if (j.contains("train")) c.train = train_from_json(j["train"]);
    if (j.contains("attacks")) c.attacks = attacks_from_json(j["attacks"], "attacks");
    c.checkpoint = j.value("checkpoint", std::string());
    if (j.contains("sweep")) c.sweep = sweep_grid_from_json(j["sweep"]);
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      reject_unknown(e, {"predict_draws", "batch_size", "limit"}, "eval");
      c.eval.predict_draws = e.value("predict_draws", c.eval.predict_draws);
      c.eval.batch_size = e.value("batch_size", c.eval.batch_size);
      if (e.contains("limit") && !e["limit"].is_null()) c.eval.limit = e["limit"].get<std::size_t>();
    }
    if (j.contains("monitor")) {
      const auto& m = j["monitor"];
      reject_unknown(m, {"examples", "attack_every", "attacks"}, "monitor");
      c.monitor.examples = m.value("examples", c.monitor.examples);
      c.monitor.attack_every = m.value("attack_every", c.monitor.attack_every);
      if (m.contains("attacks")) c.monitor.attacks = attacks_from_json(m["attacks"], "monitor.attacks");
    }
    c.save_adversarial = j.value("save_adversarial", c.save_adversarial);
    if (j.contains("verify")) c.verify = verify_from_json(j["verify"]);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key segment");
    if (node->is_null()) *node = nlohmann::json::object();
    if (!node->is_object()) throw std::invalid_argument("override '" + assignment + "': '" + part + "' is not inside an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, Command command, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot read config " + path.string());
    doc = nlohmann::json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw std::invalid_argument("config " + path.string() + " is not valid JSON");
  }
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");
  if (doc.contains("command") && doc["command"] != to_string(command))
    throw std::invalid_argument("config is for '" + doc["command"].get<std::string>() + "', not '" +
                                to_string(command) + "'");
  doc["command"] = to_string(command);
  for (const auto& o : overrides) apply_override(doc, o);
  return run_from_json(doc);
}

std::filesystem::path resolve_run_dir(const RunConfig& c) {
  if (!c.run_dir.empty()) return c.run_dir;
  auto j = run_to_json(c);
  j["run_dir"] = "";
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(fnv1a(j.dump()) & 0xffffffffull));
  return std::filesystem::path("runs") / (to_string(c.command) + "-" + buf);
}

}  // namespace divdir
