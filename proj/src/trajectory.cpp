#include "dtq/trajectory.hpp"

#include <cmath>
#include <sstream>

#include "dtq/errors.hpp"

namespace dtq {

std::vector<double> returns_to_go(std::span<const double> rewards) {
  std::vector<double> out(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    running += rewards[t];
    out[t] = running;
  }
  return out;
}

void Trajectory::refresh_rtg() { rtg = returns_to_go(rewards); }

void Trajectory::validate() const {
  const std::size_t T = rewards.size();
  if (T == 0) throw DataError("trajectory has no transitions");
  if (states.size() != T + 1) {
    throw DataError("trajectory has " + std::to_string(states.size()) + " states for " + std::to_string(T) +
                    " transitions (expected T+1)");
  }
  if (actions.size() != T) throw DataError("trajectory action count does not match reward count");
  if (!dates.empty() && dates.size() != T + 1) throw DataError("trajectory dates must cover every state");
  const std::size_t ds = states.front().size(), da = actions.front().size();
  if (ds == 0 || da == 0) throw DataError("trajectory states and actions must be non-empty vectors");
  for (const auto& s : states) {
    if (s.size() != ds) throw DataError("trajectory state widths differ");
  }
  for (const auto& a : actions) {
    if (a.size() != da) throw DataError("trajectory action widths differ");
  }
  for (double r : rewards) {
    if (!std::isfinite(r)) throw DataError("trajectory reward is not finite");
  }
}

Json trajectory_to_json(const Trajectory& traj) {
  Json j;
  j["states"] = traj.states;
  j["actions"] = traj.actions;
  j["rewards"] = traj.rewards;
  j["dates"] = traj.dates;
  j["meta"] = {{"expert", traj.meta.expert}, {"config_hash", traj.meta.config_hash}, {"seed", traj.meta.seed}};
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory traj;
  try {
    traj.states = j.at("states").get<std::vector<std::vector<double>>>();
    traj.actions = j.at("actions").get<std::vector<std::vector<double>>>();
    traj.rewards = j.at("rewards").get<std::vector<double>>();
    if (j.contains("dates")) traj.dates = j.at("dates").get<std::vector<std::string>>();
    if (j.contains("meta")) {
      const Json& m = j.at("meta");
      traj.meta.expert = m.value("expert", "");
      traj.meta.config_hash = m.value("config_hash", "");
      traj.meta.seed = m.value("seed", std::uint64_t{0});
    }
  } catch (const Json::exception& e) {
    throw DataError(std::string("malformed trajectory record: ") + e.what());
  }
  traj.validate();
  traj.refresh_rtg();
  return traj;
}

void write_trajectories(const std::filesystem::path& path, std::span<const Trajectory> trajectories) {
  std::ostringstream os;
  for (const Trajectory& t : trajectories) os << trajectory_to_json(t).dump() << '\n';
  write_text(path, os.str());
}

std::vector<Trajectory> read_trajectories(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  std::vector<Trajectory> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      out.push_back(trajectory_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path.string() + " contains no trajectories");
  return out;
}

}  // namespace dtq
