#include "nimaenh/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "nimaenh/checkpoint.hpp"
#include "nimaenh/error.hpp"

namespace nimaenh::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("config key " + key + ": '" + text + "' is not a number");
  }
  return value;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw InvalidArgument("config key " + key + ": '" + text + "' is not a non-negative integer");
  }
  return value;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  if (trim(text).empty()) return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    out.push_back(parse_unsigned(key, std::string(trim(item))));
  }
  return out;
}

std::string format_list(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

template <typename Enum>
struct EnumNames {
  std::vector<std::pair<Enum, std::string>> names;

  std::string format(Enum e) const {
    for (const auto& [value, name] : names)
      if (value == e) return name;
    return "?";
  }
  Enum parse(const std::string& key, const std::string& text) const {
    for (const auto& [value, name] : names)
      if (name == text) return value;
    std::string allowed;
    for (const auto& [value, name] : names) allowed += (allowed.empty() ? "" : "|") + name;
    throw InvalidArgument("config key " + key + ": '" + text + "' is not one of " + allowed);
  }
};

const EnumNames<train::OptimizerKind> kOptimizers{
    {{train::OptimizerKind::momentum, "momentum"}, {train::OptimizerKind::adam, "adam"}}};
const EnumNames<can::Fidelity> kFidelities{
    {{can::Fidelity::l2, "l2"}, {can::Fidelity::l1, "l1"}, {can::Fidelity::huber, "huber"}}};
const EnumNames<nn::Padding> kPaddings{
    {{nn::Padding::symmetric, "symmetric"}, {nn::Padding::zero, "zero"}}};

// One entry per configurable field: how to print it and how to set it.
struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
};

template <typename T>
Field real(T RunConfig::*section, double T::*member) {
  return {[=](const RunConfig& c) { return format_double((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_double(k, v);
          }};
}

template <typename T, typename U>
Field integer(T RunConfig::*section, U T::*member) {
  return {[=](const RunConfig& c) { return std::to_string((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = static_cast<U>(parse_unsigned(k, v));
          }};
}

template <typename T, typename E>
Field enumeration(T RunConfig::*section, E T::*member, const EnumNames<E>& names) {
  return {[=, &names](const RunConfig& c) { return names.format((c.*section).*member); },
          [=, &names](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = names.parse(k, v);
          }};
}

template <typename T>
Field list(T RunConfig::*section, std::vector<std::size_t> T::*member) {
  return {[=](const RunConfig& c) { return format_list((c.*section).*member); },
          [=](RunConfig& c, const std::string& k, const std::string& v) {
            (c.*section).*member = parse_list(k, v);
          }};
}

const std::map<std::string, Field>& fields() {
  using train::TrainConfig;
  using can::CanConfig;
  using quality::NimaConfig;
  constexpr auto T = &RunConfig::train;
  constexpr auto C = &RunConfig::can;
  constexpr auto N = &RunConfig::nima;
  static const std::map<std::string, Field> table{
      {"gamma", real(T, &TrainConfig::gamma)},
      {"fidelity", enumeration(T, &TrainConfig::fidelity, kFidelities)},
      {"huber_delta", real(T, &TrainConfig::huber_delta)},
      {"optimizer", enumeration(T, &TrainConfig::optimizer, kOptimizers)},
      {"learning_rate", real(T, &TrainConfig::learning_rate)},
      {"head_learning_rate", real(T, &TrainConfig::head_learning_rate)},
      {"momentum", real(T, &TrainConfig::momentum)},
      {"beta1", real(T, &TrainConfig::beta1)},
      {"beta2", real(T, &TrainConfig::beta2)},
      {"epsilon", real(T, &TrainConfig::epsilon)},
      {"batch_size", integer(T, &TrainConfig::batch_size)},
      {"step_budget", integer(T, &TrainConfig::step_budget)},
      {"decay_factor", real(T, &TrainConfig::decay_factor)},
      {"decay_period_epochs", integer(T, &TrainConfig::decay_period_epochs)},
      {"seed", integer(T, &TrainConfig::seed)},
      {"can.depth", integer(C, &CanConfig::depth)},
      {"can.width", integer(C, &CanConfig::width)},
      {"can.dilation_schedule", list(C, &CanConfig::dilation_schedule)},
      {"can.leaky_slope", real(C, &CanConfig::leaky_slope)},
      {"can.padding", enumeration(C, &CanConfig::padding, kPaddings)},
      {"can.init_noise_std", real(C, &CanConfig::init_noise_std)},
      {"nima.channels", list(N, &NimaConfig::channels)},
      {"nima.leaky_slope", real(N, &NimaConfig::leaky_slope)},
      {"nima.buckets", integer(N, &NimaConfig::buckets)},
      {"nima.min_extent", integer(N, &NimaConfig::min_extent)},
  };
  return table;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

KeyValues parse(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    const std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!out.emplace(key, value).second) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
  }
  return out;
}

std::string format(const KeyValues& values) {
  std::string out;
  for (const auto& [key, value] : values) out += key + " = " + value + "\n";
  return out;
}

KeyValues load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

KeyValues to_key_values(const RunConfig& config) {
  KeyValues out;
  for (const auto& [key, field] : fields()) out[key] = field.get(config);
  return out;
}

RunConfig apply(RunConfig base, const KeyValues& values) {
  for (const auto& [key, value] : values) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw InvalidArgument("unknown config key " + key);
    it->second.set(base, key, value);
  }
  base.train.validate();
  base.can.validate();
  base.nima.validate();
  return base;
}

std::string config_hash(const RunConfig& config) {
  const std::string text = format(to_key_values(config));
  return checkpoint::sha256_hex(
      {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace nimaenh::config
