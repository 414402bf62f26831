#include "adavid/schedule.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "adavid/error.hpp"

namespace adavid {
namespace {

const std::map<std::string, std::vector<std::size_t>>& patterns() {
  static const std::map<std::string, std::vector<std::size_t>> table = {
      {"d-full", {4}},          {"d-3q", {3}},           {"d-half", {2}},         {"d-quarter", {1}},
      {"d-dec", {4, 3, 2, 1}},  {"d-dec-high", {4, 3, 2}}, {"d-dec-low", {3, 2, 1}},
      {"d-inc", {1, 2, 3, 4}},  {"d-inc-high", {2, 3, 4}}, {"d-inc-low", {1, 2, 3}},
  };
  return table;
}

}  // namespace

std::string DimSchedule::label() const {
  if (!name.empty()) return name;
  std::ostringstream os;
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? ":" : "") << widths[i];
  return os.str();
}

std::vector<std::size_t> allowed_widths(std::size_t full_width) {
  if (full_width == 0 || full_width % 4 != 0) {
    throw InvalidArgument("full width " + std::to_string(full_width) + " must be a positive multiple of 4");
  }
  return {full_width, 3 * full_width / 4, full_width / 2, full_width / 4};
}

const std::vector<std::string>& schedule_names() {
  static const std::vector<std::string> names = {"d-full",     "d-3q",      "d-half", "d-quarter",  "d-dec",
                                                 "d-dec-high", "d-dec-low", "d-inc",  "d-inc-high", "d-inc-low"};
  return names;
}

DimSchedule named_schedule(const std::string& name, std::size_t full_width, std::size_t layers) {
  const auto allowed = allowed_widths(full_width);
  if (layers == 0) throw InvalidArgument("schedule needs at least one layer");
  auto it = patterns().find(name);
  if (it == patterns().end()) {
    // d-<width> shorthand, e.g. d-768 at D = 768
    if (name.rfind("d-", 0) == 0 && name.size() > 2 &&
        std::all_of(name.begin() + 2, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      const std::size_t w = std::stoul(name.substr(2));
      if (std::find(allowed.begin(), allowed.end(), w) != allowed.end()) {
        return DimSchedule{std::vector<std::size_t>(layers, w), name};
      }
    }
    std::ostringstream os;
    os << "unknown schedule '" << name << "'; known:";
    for (const auto& n : schedule_names()) os << ' ' << n;
    throw InvalidArgument(os.str());
  }
  const auto& groups = it->second;
  if (layers % groups.size() != 0) {
    throw InvalidArgument("schedule '" + name + "' has " + std::to_string(groups.size()) +
                          " groups, which does not divide " + std::to_string(layers) + " layers");
  }
  DimSchedule s;
  s.name = name;
  const std::size_t per_group = layers / groups.size();
  for (std::size_t quarters : groups)
    for (std::size_t i = 0; i < per_group; ++i) s.widths.push_back(quarters * full_width / 4);
  return s;
}

void validate_schedule(const DimSchedule& schedule, std::size_t full_width, std::size_t layers) {
  if (schedule.widths.size() != layers) {
    throw InvalidArgument("schedule '" + schedule.label() + "' has " + std::to_string(schedule.widths.size()) +
                          " entries for " + std::to_string(layers) + " layers");
  }
  const auto allowed = allowed_widths(full_width);
  for (std::size_t w : schedule.widths) {
    if (std::find(allowed.begin(), allowed.end(), w) == allowed.end()) {
      throw InvalidArgument("schedule '" + schedule.label() + "' uses width " + std::to_string(w) +
                            " outside the allowed set {" + std::to_string(allowed[0]) + ", " +
                            std::to_string(allowed[1]) + ", " + std::to_string(allowed[2]) + ", " +
                            std::to_string(allowed[3]) + "}");
    }
  }
}

DimSchedule parse_schedule(const std::string& text, std::size_t full_width, std::size_t layers) {
  if (text.find(':') == std::string::npos && (text.empty() || text[0] < '0' || text[0] > '9')) {
    return named_schedule(text, full_width, layers);
  }
  DimSchedule s;
  std::istringstream is(text);
  std::string part;
  while (std::getline(is, part, ':')) {
    try {
      std::size_t used = 0;
      s.widths.push_back(std::stoul(part, &used));
      if (used != part.size()) throw InvalidArgument("");
    } catch (const std::exception&) {
      throw InvalidArgument("malformed schedule '" + text + "'");
    }
  }
  validate_schedule(s, full_width, layers);
  return s;
}

}  // namespace adavid
