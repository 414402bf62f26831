#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace adavid {

// Per-layer active widths for one forward pass.
struct DimSchedule {
  std::vector<std::size_t> widths;
  std::string name;  // empty for sampled schedules

  std::size_t layers() const { return widths.size(); }
  // Name when set, otherwise the widths joined with ':' (e.g. "64:48:48:16").
  std::string label() const;
  bool operator==(const DimSchedule&) const = default;
};

// {D, 3D/4, D/2, D/4}, descending. D must be divisible by 4.
std::vector<std::size_t> allowed_widths(std::size_t full_width);

// Named evaluation configurations. Patterns are in quarters of D, one entry
// per equal-size group of layers:
//   d-full [4]  d-3q [3]  d-half [2]  d-quarter [1]
//   d-dec [4,3,2,1]  d-dec-high [4,3,2]  d-dec-low [3,2,1]
//   d-inc [1,2,3,4]  d-inc-high [2,3,4]  d-inc-low [1,2,3]
// "d-<w>" for any allowed width w is accepted as a uniform schedule.
DimSchedule named_schedule(const std::string& name, std::size_t full_width, std::size_t layers);

// Names of the ten patterns above, in table order.
const std::vector<std::string>& schedule_names();

// Throws InvalidArgument unless the schedule has `layers` entries, all in
// the allowed set.
void validate_schedule(const DimSchedule& schedule, std::size_t full_width, std::size_t layers);

// Parses "d-dec" style names or explicit ':'-separated widths.
DimSchedule parse_schedule(const std::string& text, std::size_t full_width, std::size_t layers);

}  // namespace adavid
