#include "ldbp/cli/artifact.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ldbp/errors.hpp"

namespace ldbp::cli {

namespace {

constexpr const char* kKind = "ldbp.model";

json axes_for(const Param& p) {
  if (p.group == groups::kCdTaps) return json::array({"half_tap"});
  if (p.group == groups::kNlScale) return json::array({"scalar"});
  if (p.group == groups::kTensor) return json::array({"output_band", "input_band", "tap"});
  if (p.group == groups::kRotation) return json::array({"angle(theta,phi1,phi2)"});
  if (p.group == groups::kFdTaps) return json::array({"tap"});
  if (p.group == groups::kMimo) return json::array({"output_component", "input_component", "tap"});
  json a = json::array();
  for (std::size_t i = 0; i < p.shape.size(); ++i) a.push_back("axis" + std::to_string(i));
  return a;
}

std::string order_name(StageOrder o) {
  return o == StageOrder::rotation_then_fd ? "rotation_then_fd" : "fd_then_rotation";
}

StageOrder parse_order(const std::string& s) {
  if (s == "rotation_then_fd") return StageOrder::rotation_then_fd;
  if (s == "fd_then_rotation") return StageOrder::fd_then_rotation;
  throw IntegrityError("artifact: unknown stage order '" + s + "'");
}

json body_json(const ModelArtifact& a) {
  json j;
  j["schema_version"] = kArtifactSchemaVersion;
  j["kind"] = kKind;
  j["architecture"] = a.architecture;
  j["parameters"] = params_json(a.params);
  if (a.quantization) {
    json s = json::object();
    for (const auto& [k, v] : a.quantization->scales) s[k] = v;
    j["quantization"] = {{"bits", a.quantization->bits}, {"scales", s}};
  } else {
    j["quantization"] = nullptr;
  }
  j["provenance"] = a.provenance.is_null() ? json::object() : a.provenance;
  return j;
}

std::string digest_of(const json& body) { return "sha256:" + sha256_hex(body.dump()); }

template <class F>
auto checked(const char* what, F&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("artifact: malformed ") + what + ": " + e.what());
  }
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(read_file(p)); }

bool ModelArtifact::operator==(const ModelArtifact& o) const { return body_json(*this) == body_json(o); }

json params_json(const ParamSet& ps) {
  json arr = json::array();
  for (const Param& p : ps) {
    json e;
    e["name"] = p.name;
    e["group"] = p.group;
    e["shape"] = p.shape;
    e["complex"] = p.is_complex;
    e["axes"] = axes_for(p);
    json v = json::array();
    if (p.is_complex) {
      for (std::size_t i = 0; i + 1 < p.values.size(); i += 2) v.push_back(json::array({p.values[i], p.values[i + 1]}));
    } else {
      for (double x : p.values) v.push_back(x);
    }
    e["values"] = v;
    arr.push_back(e);
  }
  return arr;
}

ParamSet params_from_json(const json& j) {
  return checked("parameters", [&] {
    ParamSet ps;
    for (const auto& e : j) {
      Param p;
      p.name = e.at("name").get<std::string>();
      p.group = e.at("group").get<std::string>();
      p.shape = e.at("shape").get<std::vector<std::size_t>>();
      p.is_complex = e.at("complex").get<bool>();
      for (const auto& v : e.at("values")) {
        if (p.is_complex) {
          p.values.push_back(v.at(0).get<double>());
          p.values.push_back(v.at(1).get<double>());
        } else {
          p.values.push_back(v.get<double>());
        }
      }
      if (p.values.size() != p.element_count() * (p.is_complex ? 2 : 1))
        throw IntegrityError("artifact: parameter '" + p.name + "' does not match its shape");
      ps.add(std::move(p));
    }
    return ps;
  });
}

ModelArtifact make_artifact(const DbpModel& m) {
  m.validate();
  ModelArtifact a;
  json steps = json::array();
  for (const auto& s : m.steps) steps.push_back({{"taps", s.filter.length()}});
  a.architecture = {{"type", "dbp"},
                    {"sample_rate_hz", m.meta.sample_rate},
                    {"samples_per_symbol", m.meta.samples_per_symbol},
                    {"seed", m.meta.seed},
                    {"link", m.meta.link},
                    {"steps", steps}};
  a.params = dbp_params(m);
  return a;
}

ModelArtifact make_artifact(const SubbandDbpModel& m, const FilterBankConfig& bank, double input_sample_rate) {
  bank.validate();
  m.validate(static_cast<std::size_t>(bank.n_subbands));
  ModelArtifact a;
  json steps = json::array();
  for (const auto& s : m.steps) {
    json bt = json::array();
    for (const auto& f : s.filters) bt.push_back(f.size());
    json st = json::array();
    for (const auto& t : s.coupling.stages) st.push_back(t.taps);
    steps.push_back({{"band_taps", bt}, {"stage_taps", st}});
  }
  a.architecture = {{"type", "subband_dbp"},
                    {"n_subbands", bank.n_subbands},
                    {"oversampling", bank.oversampling},
                    {"guard_fraction", bank.guard_fraction},
                    {"prototype", bank.prototype},
                    {"input_sample_rate_hz", input_sample_rate},
                    {"steps", steps}};
  a.params = subband_params(m);
  return a;
}

ModelArtifact make_artifact(const MultiStepPmdModel& m) {
  ModelArtifact a;
  json stages = json::array();
  for (const auto& s : m.stages)
    stages.push_back({{"fd_taps", s.fd.taps.size()}, {"delta_samples", s.fd.delta}, {"order", order_name(s.order)}});
  a.architecture = {{"type", "pmd_chain"}, {"stages", stages}};
  a.params = pmd_params(m);
  return a;
}

ModelArtifact make_artifact(const MimoFirBaseline& m) {
  ModelArtifact a;
  a.architecture = {{"type", "mimo_fir"}, {"taps", m.taps}};
  a.params = mimo_params(m);
  return a;
}

std::string artifact_type(const ModelArtifact& a) {
  return checked("architecture", [&] { return a.architecture.at("type").get<std::string>(); });
}

DbpModel to_dbp(const ModelArtifact& a) {
  if (artifact_type(a) != "dbp") throw ConfigError("artifact holds a " + artifact_type(a) + " model, not dbp");
  return checked("architecture", [&] {
    const json& ar = a.architecture;
    DbpModel m;
    m.meta.sample_rate = ar.at("sample_rate_hz").get<double>();
    m.meta.samples_per_symbol = ar.at("samples_per_symbol").get<std::size_t>();
    m.meta.seed = ar.at("seed").get<std::uint64_t>();
    m.meta.link = ar.at("link").get<std::string>();
    for (const auto& s : ar.at("steps")) {
      const auto k = s.at("taps").get<std::size_t>();
      m.steps.push_back({FoldedFir(std::vector<cplx>((k + 1) / 2), k), 0.0});
    }
    return dbp_from_params(m, a.params);
  });
}

SubbandDbpModel to_subband(const ModelArtifact& a, FilterBankConfig* bank) {
  if (artifact_type(a) != "subband_dbp")
    throw ConfigError("artifact holds a " + artifact_type(a) + " model, not subband_dbp");
  return checked("architecture", [&] {
    const json& ar = a.architecture;
    const auto s = ar.at("n_subbands").get<std::size_t>();
    if (bank) {
      bank->n_subbands = static_cast<int>(s);
      bank->oversampling = ar.at("oversampling").get<int>();
      bank->guard_fraction = ar.at("guard_fraction").get<double>();
      bank->prototype = ar.at("prototype").get<std::vector<double>>();
    }
    SubbandDbpModel m;
    for (const auto& st : ar.at("steps")) {
      SubbandDbpStep step;
      for (const auto& k : st.at("band_taps")) step.filters.emplace_back(k.get<std::size_t>());
      for (const auto& l : st.at("stage_taps"))
        step.coupling.stages.push_back(MimoIntensityTensor::zeros(s, l.get<std::size_t>()));
      m.steps.push_back(std::move(step));
    }
    return subband_from_params(m, a.params);
  });
}

MultiStepPmdModel to_pmd(const ModelArtifact& a) {
  if (artifact_type(a) != "pmd_chain") throw ConfigError("artifact holds a " + artifact_type(a) + " model, not pmd_chain");
  return checked("architecture", [&] {
    MultiStepPmdModel m;
    for (const auto& s : a.architecture.at("stages")) {
      PmdStage st;
      st.fd.taps.assign(s.at("fd_taps").get<std::size_t>(), 0.0);
      st.fd.delta = s.at("delta_samples").get<double>();
      st.order = parse_order(s.at("order").get<std::string>());
      m.stages.push_back(st);
    }
    return pmd_from_params(m, a.params);
  });
}

MimoFirBaseline to_mimo(const ModelArtifact& a) {
  if (artifact_type(a) != "mimo_fir") throw ConfigError("artifact holds a " + artifact_type(a) + " model, not mimo_fir");
  return mimo_from_params(a.params);
}

std::string serialize(const ModelArtifact& a) {
  json j = body_json(a);
  const std::string digest = digest_of(j);
  j["content_digest"] = digest;
  return j.dump(2) + "\n";
}

ModelArtifact deserialize(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IntegrityError(std::string("artifact: not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version") || !j.at("schema_version").is_number_integer())
    throw IntegrityError("artifact: missing schema_version");
  const long v = j.at("schema_version").get<long>();
  if (v != kArtifactSchemaVersion)
    throw IntegrityError("artifact: schema version " + std::to_string(v) + " is not supported (this build reads version " +
                         std::to_string(kArtifactSchemaVersion) + ")");
  if (!j.contains("kind") || j.at("kind") != kKind) throw IntegrityError("artifact: not an ldbp model artifact");
  if (!j.contains("content_digest") || !j.at("content_digest").is_string())
    throw IntegrityError("artifact: missing content_digest");
  const std::string stored = j.at("content_digest").get<std::string>();
  json body = j;
  body.erase("content_digest");
  if (digest_of(body) != stored) throw IntegrityError("artifact: content digest mismatch (file modified or corrupted)");

  return checked("artifact", [&] {
    ModelArtifact a;
    a.architecture = j.at("architecture");
    a.params = params_from_json(j.at("parameters"));
    if (!j.at("quantization").is_null()) {
      QuantMetadata q;
      q.bits = j.at("quantization").at("bits").get<int>();
      for (auto it = j.at("quantization").at("scales").begin(); it != j.at("quantization").at("scales").end(); ++it)
        q.scales[it.key()] = it.value().get<double>();
      a.quantization = q;
    }
    a.provenance = j.at("provenance");
    return a;
  });
}

ModelArtifact load_artifact(const std::filesystem::path& p) { return deserialize(read_file(p)); }

void save_artifact(const std::filesystem::path& p, const ModelArtifact& a) { atomic_write(p, serialize(a)); }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void atomic_write(const std::filesystem::path& p, std::string_view bytes) {
  const auto dir = p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
  std::filesystem::create_directories(dir);
  const auto tmp = dir / ("." + p.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    const bool ok = std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace ldbp::cli
