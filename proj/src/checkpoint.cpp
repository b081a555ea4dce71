#include "divdir/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

namespace divdir {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'I', 'V', 'D', 'I', 'R', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

std::string kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::dense: return "dense";
    case LayerKind::avgpool: return "avgpool";
  }
  return "?";
}

LayerKind kind_from(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "dense") return LayerKind::dense;
  if (s == "avgpool") return LayerKind::avgpool;
  throw std::invalid_argument("network spec: unknown layer kind '" + s + "'");
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
}

}  // namespace

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json jl{{"kind", kind_name(l.kind)}, {"bayesian", l.bayesian}};
    if (l.kind != LayerKind::avgpool) {
      jl["units"] = l.units;
      jl["activation"] = l.activation == Activation::relu ? "relu" : "none";
    }
    if (l.kind == LayerKind::conv) jl["kernel"] = l.kernel;
    layers.push_back(std::move(jl));
  }
  return {{"input_shape", spec.input_shape},
          {"layers", std::move(layers)},
          {"draws", spec.draws},
          {"init_sigma", spec.init_sigma},
          {"prior_sigma", spec.prior.prior_sigma}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"input_shape", "layers", "draws", "init_sigma", "prior_sigma", "bayesian_fraction"}, "network");
  NetworkSpec s;
  s.input_shape = j.at("input_shape").get<Shape>();
  for (const auto& jl : j.at("layers")) {
    reject_unknown(jl, {"kind", "units", "kernel", "activation", "bayesian"}, "network layer");
    LayerSpec l;
    l.kind = kind_from(jl.at("kind").get<std::string>());
    if (l.kind != LayerKind::avgpool) l.units = jl.at("units").get<std::size_t>();
    l.kernel = l.kind == LayerKind::conv ? jl.value("kernel", std::size_t{3}) : 0;
    const std::string act = jl.value("activation", std::string(l.kind == LayerKind::avgpool ? "none" : "relu"));
    if (act != "relu" && act != "none") throw std::invalid_argument("network layer: unknown activation '" + act + "'");
    l.activation = act == "relu" ? Activation::relu : Activation::none;
    l.bayesian = jl.value("bayesian", false);
    s.layers.push_back(l);
  }
  s.draws = j.value("draws", std::size_t{10});
  s.init_sigma = j.value("init_sigma", 0.05);
  s.prior.prior_sigma = j.value("prior_sigma", 1.0);
  if (j.contains("bayesian_fraction")) s = s.with_bayesian_fraction(j.at("bayesian_fraction").get<double>());
  s.validate();
  return s;
}

namespace binio {

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_doubles(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(what + ": truncated");
  return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error(what + ": truncated");
  return v;
}

void read_doubles(std::istream& is, std::span<double> out, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()))) {
    throw std::runtime_error(what + ": truncated");
  }
}

}  // namespace binio

void save_checkpoint(const std::filesystem::path& path, const BayesianNetwork& net, const nlohmann::json& meta) {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < net.tensors().size(); ++i) {
    tensors.push_back({{"name", net.names()[i]}, {"shape", net.tensors()[i].shape()}});
  }
  const std::string header = nlohmann::json{{"spec", spec_to_json(net.spec())}, {"tensors", tensors}, {"meta", meta}}.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  binio::write_u32(os, kVersion);
  binio::write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : net.tensors()) binio::write_doubles(os, t.data());
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

BayesianNetwork load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  const std::string what = "checkpoint " + path.string();
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw std::runtime_error(what + ": bad magic");
  }
  if (const auto v = binio::read_u32(is, what); v != kVersion) {
    throw std::runtime_error(what + ": unsupported version " + std::to_string(v));
  }
  const auto len = binio::read_u64(is, what);
  std::string header(len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(len))) throw std::runtime_error(what + ": truncated header");
  const auto j = nlohmann::json::parse(header);

  BayesianNetwork net(spec_from_json(j.at("spec")), 0);
  const auto& entries = j.at("tensors");
  if (entries.size() != net.tensors().size()) throw std::runtime_error(what + ": tensor count does not match spec");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto shape = entries[i].at("shape").get<Shape>();
    if (entries[i].at("name").get<std::string>() != net.names()[i] || shape != net.tensors()[i].shape()) {
      throw std::runtime_error(what + ": tensor " + std::to_string(i) + " does not match spec layout");
    }
    binio::read_doubles(is, net.tensors()[i].data(), what);
  }
  if (meta) *meta = j.value("meta", nlohmann::json::object());
  return net;
}

}  // namespace divdir
