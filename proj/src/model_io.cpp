#include "tlode/model_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tlode/error.hpp"

namespace tlode {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "tlode-model";

std::string double_to_hex(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double hex_to_double(const std::string& s) {
  const char* p = s.c_str();
  char* end = nullptr;
  double v = std::strtod(p, &end);
  if (end != p + s.size()) {
    throw IoError("model file is corrupt: bad parameter literal '" + s + "'");
  }
  return v;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string checksum_hex(const std::string& payload) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(payload));
  return std::string("fnv1a64:") + buf;
}

nlohmann::json net_to_json(const Mlp& net) {
  nlohmann::json j;
  j["widths"] = net.widths;
  std::vector<std::string> acts;
  for (auto a : net.acts) acts.push_back(activation_name(a));
  j["activations"] = acts;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& t : net.params) {
    nlohmann::json arr = nlohmann::json::array();
    for (double v : t.data) arr.push_back(double_to_hex(v));
    params.push_back(std::move(arr));
  }
  j["params"] = std::move(params);
  return j;
}

Mlp net_from_json(const nlohmann::json& j, const std::string& slot) {
  Mlp net;
  net.widths = j.at("widths").get<std::vector<std::size_t>>();
  if (net.widths.size() < 2) {
    throw IoError("model file is corrupt: net '" + slot + "' needs at least two widths");
  }
  for (const auto& name : j.at("activations")) {
    net.acts.push_back(activation_from_name(name.get<std::string>()));
  }
  if (net.acts.size() != net.widths.size() - 1) {
    throw IoError("model file is corrupt: net '" + slot + "' has " +
                  std::to_string(net.acts.size()) + " activations for " +
                  std::to_string(net.widths.size() - 1) + " layers");
  }
  const auto& params = j.at("params");
  if (params.size() != 2 * net.acts.size()) {
    throw IoError("model file is corrupt: net '" + slot + "' has " +
                  std::to_string(params.size()) + " parameter tensors, expected " +
                  std::to_string(2 * net.acts.size()));
  }
  for (std::size_t l = 0; l < net.acts.size(); ++l) {
    const std::size_t rows = net.widths[l + 1], cols = net.widths[l];
    for (int which = 0; which < 2; ++which) {
      const auto& arr = params[2 * l + which];
      const std::size_t want = which == 0 ? rows * cols : rows;
      if (arr.size() != want) {
        throw IoError("model file is corrupt: net '" + slot + "' layer " + std::to_string(l) +
                      (which == 0 ? " weight" : " bias") + " has " + std::to_string(arr.size()) +
                      " entries, expected " + std::to_string(want));
      }
      std::vector<double> data;
      data.reserve(want);
      for (const auto& s : arr) data.push_back(hex_to_double(s.get<std::string>()));
      net.params.push_back(which == 0 ? Tensor({rows, cols}, std::move(data))
                                      : Tensor({rows}, std::move(data)));
    }
  }
  return net;
}

nlohmann::json body_to_json(const SavedModel& m) {
  nlohmann::json j;
  j["metadata"] = {{"p", m.meta.p},
                   {"dt", double_to_hex(m.meta.dt)},
                   {"output_shape", m.meta.output_shape},
                   {"seed", m.meta.seed}};
  nlohmann::json nets = nlohmann::json::object();
  for (const auto& [name, net] : m.nets) nets[name] = net_to_json(net);
  j["nets"] = std::move(nets);
  return j;
}

}  // namespace

const Mlp* SavedModel::find(const std::string& name) const {
  for (const auto& [slot, net] : nets) {
    if (slot == name) return &net;
  }
  return nullptr;
}

void save_model(const SavedModel& m, const std::string& path) {
  nlohmann::json body = body_to_json(m);
  nlohmann::json j;
  j["format"] = kFormatName;
  j["version"] = kFormatVersion;
  j["body"] = body;
  j["checksum"] = checksum_hex(body.dump());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(1) << "\n";
  if (!out.flush()) throw IoError("write to '" + path + "' failed");
}

SavedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model file '" + path + "' is corrupt or truncated: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kFormatName) {
      throw IoError("'" + path + "' is not a model file (format tag mismatch)");
    }
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion) {
      throw IoError("model file '" + path + "' has version " + std::to_string(version) +
                    "; this build reads version " + std::to_string(kFormatVersion));
    }
    const nlohmann::json& body = j.at("body");
    if (j.at("checksum").get<std::string>() != checksum_hex(body.dump())) {
      throw IoError("model file '" + path + "' failed its checksum; refusing to load");
    }
    SavedModel m;
    const auto& meta = body.at("metadata");
    m.meta.p = meta.at("p").get<int>();
    m.meta.dt = hex_to_double(meta.at("dt").get<std::string>());
    m.meta.output_shape = meta.at("output_shape").get<std::string>();
    m.meta.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& [slot, net] : body.at("nets").items()) {
      m.nets.emplace_back(slot, net_from_json(net, slot));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model file '" + path + "' is corrupt: " + e.what());
  }
}

void require_topology(const Mlp& net, std::size_t in, std::size_t out, const std::string& role) {
  if (net.input_dim() != in || net.output_dim() != out) {
    throw ConfigError(role + ": net maps " + std::to_string(net.input_dim()) + " -> " +
                      std::to_string(net.output_dim()) + " but this use needs " +
                      std::to_string(in) + " -> " + std::to_string(out));
  }
}

std::string model_summary(const SavedModel& m) {
  std::ostringstream os;
  os << "format " << kFormatName << " v" << kFormatVersion << "\n";
  os << "metadata: p=" << m.meta.p << " dt=" << m.meta.dt << " output_shape="
     << (m.meta.output_shape.empty() ? "-" : m.meta.output_shape) << " seed=" << m.meta.seed
     << "\n";
  for (const auto& [slot, net] : m.nets) {
    os << "net '" << slot << "': ";
    for (std::size_t i = 0; i < net.widths.size(); ++i) {
      if (i) os << " -> ";
      os << net.widths[i];
    }
    os << " (";
    for (std::size_t i = 0; i < net.acts.size(); ++i) {
      if (i) os << ", ";
      os << activation_name(net.acts[i]);
    }
    os << "), " << net.param_count() << " parameters\n";
  }
  return os.str();
}

}  // namespace tlode
