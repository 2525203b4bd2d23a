#include "spfde/config.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "spfde/data.hpp"
#include "spfde/errors.hpp"

namespace spfde {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Section -> key -> value with consumption tracking for fail-fast
// unknown-key errors.
class Ini {
 public:
  static Ini parse(const std::string& text) {
    Ini ini;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(lineno) +
                            ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        ini.sections_[section];
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": key outside any [section]");
      auto& sec = ini.sections_[section];
      if (sec.count(key))
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": duplicate key '" + key + "'");
      sec[key] = value;
    }
    return ini;
  }

  std::optional<std::string> take(const std::string& section,
                                  const std::string& key) {
    auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    std::string v = k->second;
    s->second.erase(k);
    return v;
  }

  void ensure_consumed() const {
    for (const auto& [section, keys] : sections_) {
      if (!known_sections_.count(section))
        throw ConfigError("config: unknown section [" + section + "]");
      if (!keys.empty())
        throw ConfigError("config: unknown key '" + keys.begin()->first +
                          "' in section [" + section + "]");
    }
  }

  void declare_sections(std::initializer_list<std::string> names) {
    for (const auto& n : names) known_sections_.insert(n);
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::set<std::string> known_sections_;
};

long long to_int(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + what + ": '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& what) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + what + ": '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& what) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: bad boolean for " + what + ": '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  Ini ini = Ini::parse(text);
  ini.declare_sections(
      {"run", "dataset", "model", "dst", "freeze", "sieve", "optimizer"});
  RunConfig c;

  if (auto v = ini.take("run", "epochs")) c.epochs = static_cast<int>(to_int(*v, "run.epochs"));
  if (auto v = ini.take("run", "seed")) c.seed = static_cast<std::uint64_t>(to_int(*v, "run.seed"));
  if (auto v = ini.take("run", "batch_size")) c.batch_size = static_cast<std::size_t>(to_int(*v, "run.batch_size"));
  if (auto v = ini.take("run", "checkpoint_every")) c.checkpoint_every = static_cast<int>(to_int(*v, "run.checkpoint_every"));
  if (auto v = ini.take("run", "precision")) c.precision = precision_from_string(*v);
  if (auto v = ini.take("run", "warmup_epochs")) c.warmup_epochs = static_cast<int>(to_int(*v, "run.warmup_epochs"));

  if (auto v = ini.take("dataset", "kind")) c.dataset_kind = *v;
  if (auto v = ini.take("dataset", "train_n")) c.synth_train_n = static_cast<std::size_t>(to_int(*v, "dataset.train_n"));
  if (auto v = ini.take("dataset", "test_n")) c.synth_test_n = static_cast<std::size_t>(to_int(*v, "dataset.test_n"));
  if (auto v = ini.take("dataset", "classes")) c.synth_classes = static_cast<std::size_t>(to_int(*v, "dataset.classes"));
  if (auto v = ini.take("dataset", "dim")) c.synth_dim = static_cast<std::size_t>(to_int(*v, "dataset.dim"));
  if (auto v = ini.take("dataset", "scale")) c.synth_scale = to_double(*v, "dataset.scale");
  if (auto v = ini.take("dataset", "noise")) c.synth_noise = to_double(*v, "dataset.noise");
  if (auto v = ini.take("dataset", "seed")) c.dataset_seed = static_cast<std::uint64_t>(to_int(*v, "dataset.seed"));
  if (auto v = ini.take("dataset", "train_images")) c.train_images = *v;
  if (auto v = ini.take("dataset", "train_labels")) c.train_labels = *v;
  if (auto v = ini.take("dataset", "test_images")) c.test_images = *v;
  if (auto v = ini.take("dataset", "test_labels")) c.test_labels = *v;
  if (auto v = ini.take("dataset", "train_files")) c.train_files = split(*v, ';');
  if (auto v = ini.take("dataset", "test_files")) c.test_files = split(*v, ';');
  if (auto v = ini.take("dataset", "augment")) c.augment = to_bool(*v, "dataset.augment");
  if (auto v = ini.take("dataset", "normalize")) c.normalize = to_bool(*v, "dataset.normalize");

  if (auto v = ini.take("model", "arch")) c.arch = *v;
  if (auto v = ini.take("model", "blocks")) {
    if (*v != "auto") {
      for (const auto& part : split(*v, ','))
        c.blocks.push_back(static_cast<std::size_t>(to_int(part, "model.blocks")));
    }
  }
  if (auto v = ini.take("model", "dense_last")) c.dense_last = to_bool(*v, "model.dense_last");

  if (auto v = ini.take("dst", "sparsity")) c.sparsity = to_double(*v, "dst.sparsity");
  if (auto v = ini.take("dst", "update_interval")) c.update_interval = static_cast<int>(to_int(*v, "dst.update_interval"));
  if (auto v = ini.take("dst", "search_end")) c.search_end = static_cast<int>(to_int(*v, "dst.search_end"));
  if (auto v = ini.take("dst", "grow_phases")) {
    for (const auto& part : split(*v, ',')) {
      if (part.empty()) continue;
      auto colon = part.find(':');
      if (colon == std::string::npos)
        throw ConfigError("config: dst.grow_phases entries are epoch:delta");
      c.grow_phases.emplace_back(
          static_cast<int>(to_int(part.substr(0, colon), "dst.grow_phases")),
          to_double(part.substr(colon + 1), "dst.grow_phases"));
    }
  }

  if (auto v = ini.take("freeze", "scheme")) c.scheme = freeze_scheme_from_string(*v);
  if (auto v = ini.take("freeze", "target_reduction")) {
    const double t = to_double(*v, "freeze.target_reduction");
    if (t > 0.0) c.target_reduction = t;
  }
  if (auto v = ini.take("freeze", "start_epoch")) c.start_epoch = static_cast<int>(to_int(*v, "freeze.start_epoch"));
  if (auto v = ini.take("freeze", "frozen_layer_fraction")) c.frozen_layer_fraction = to_double(*v, "freeze.frozen_layer_fraction");

  if (auto v = ini.take("sieve", "p")) c.sieve_p = to_double(*v, "sieve.p");
  if (auto v = ini.take("sieve", "update_ratio")) c.sieve_update_ratio = to_double(*v, "sieve.update_ratio");
  if (auto v = ini.take("sieve", "shuffle")) {
    if (*v == "after_each_update") c.sieve_shuffle = SieveShuffleMode::after_each_update;
    else if (*v == "once_after_drain") c.sieve_shuffle = SieveShuffleMode::once_after_drain;
    else throw ConfigError("config: sieve.shuffle must be after_each_update or once_after_drain");
  }

  if (auto v = ini.take("optimizer", "lr0")) c.lr0 = to_double(*v, "optimizer.lr0");
  if (auto v = ini.take("optimizer", "lr_end")) c.lr_end = to_double(*v, "optimizer.lr_end");
  if (auto v = ini.take("optimizer", "momentum")) c.momentum = to_double(*v, "optimizer.momentum");
  if (auto v = ini.take("optimizer", "weight_decay")) c.weight_decay = to_double(*v, "optimizer.weight_decay");

  ini.ensure_consumed();

  // Cross-field validation mirrors the downstream module contracts so a bad
  // config fails before any training starts.
  if (c.epochs <= 0) throw ConfigError("config: run.epochs must be positive");
  if (c.arch.empty()) throw ConfigError("config: model.arch is required");
  if (c.dataset_kind.empty()) throw ConfigError("config: dataset.kind is required");
  if (c.dataset_kind != "synth" && c.dataset_kind != "idx" &&
      c.dataset_kind != "cifar10")
    throw ConfigError("config: dataset.kind must be synth, idx, or cifar10");
  if (c.dataset_kind == "idx" && (c.train_images.empty() || c.train_labels.empty()))
    throw ConfigError("config: idx dataset needs train_images and train_labels");
  if (c.dataset_kind == "cifar10" && c.train_files.empty())
    throw ConfigError("config: cifar10 dataset needs train_files");
  if (c.sparsity < 0.0 || c.sparsity >= 1.0)
    throw ConfigError("config: dst.sparsity must be in [0,1)");
  if (c.search_end > c.epochs)
    throw ConfigError("config: dst.search_end exceeds run.epochs");
  if (c.target_reduction && c.start_epoch)
    throw ConfigError("config: freeze.target_reduction and freeze.start_epoch are exclusive");
  if (c.start_epoch && (*c.start_epoch <= 0 || *c.start_epoch > c.epochs))
    throw ConfigError("config: freeze.start_epoch outside (0, epochs]");
  if (c.start_epoch && *c.start_epoch % c.update_interval != 0)
    throw ConfigError("config: freeze.start_epoch must lie on the update grid");
  if (c.sieve_p < 0.0 || c.sieve_p >= 1.0)
    throw ConfigError("config: sieve.p must be in [0,1)");
  return c;
}

std::string RunConfig::train_spec() const {
  if (dataset_kind == "synth") {
    return make_synth_spec(synth_train_n, synth_classes, synth_dim,
                           effective_dataset_seed(), /*stream=*/2, synth_scale,
                           synth_noise);
  }
  if (dataset_kind == "idx")
    return "idx:images=" + train_images + ",labels=" + train_labels;
  if (dataset_kind == "cifar10") {
    std::string files;
    for (std::size_t i = 0; i < train_files.size(); ++i) {
      if (i) files += ";";
      files += train_files[i];
    }
    return "cifar10:files=" + files;
  }
  throw ConfigError("config: dataset.kind unset");
}

std::string RunConfig::test_spec() const {
  if (dataset_kind == "synth") {
    if (synth_test_n == 0) return "";
    return make_synth_spec(synth_test_n, synth_classes, synth_dim,
                           effective_dataset_seed(), /*stream=*/3, synth_scale,
                           synth_noise);
  }
  if (dataset_kind == "idx") {
    if (test_images.empty()) return "";
    return "idx:images=" + test_images + ",labels=" + test_labels;
  }
  if (dataset_kind == "cifar10") {
    if (test_files.empty()) return "";
    std::string files;
    for (std::size_t i = 0; i < test_files.size(); ++i) {
      if (i) files += ";";
      files += test_files[i];
    }
    return "cifar10:files=" + files;
  }
  return "";
}

}  // namespace spfde
