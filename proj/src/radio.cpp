#include "uavrelay/radio.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <tuple>

#include "uavrelay/errors.hpp"

namespace uavrelay {

void validate(const ChannelParams& p) {
  if (!(p.a > 0) || !(p.b > 0)) throw ConfigError("channel a, b must be > 0");
  if (!(p.eta_los >= 0) || !(p.eta_nlos >= p.eta_los)) {
    throw ConfigError("channel requires eta_nlos >= eta_los >= 0");
  }
  if (!(p.carrier_hz > 0) || !(p.light_speed > 0)) {
    throw ConfigError("carrier frequency and light speed must be > 0");
  }
  if (!(p.altitude_m > 0)) throw ConfigError("altitude must be > 0");
  if (!(p.search_limit_m > 0)) throw ConfigError("search_limit_m must be > 0");
}

double elevation_deg(const ChannelParams& p, double horizontal_m) {
  if (horizontal_m <= 0.0) return 90.0;
  return 180.0 / std::numbers::pi * std::atan(p.altitude_m / horizontal_m);
}

double p_los(const ChannelParams& p, double horizontal_m) {
  const double theta = elevation_deg(p, horizontal_m);
  return 1.0 / (1.0 + p.a * std::exp(-p.b * (theta - p.a)));
}

namespace {

double free_space_loss(const ChannelParams& p, double horizontal_m) {
  const double slant = std::hypot(horizontal_m, p.altitude_m);
  return 20.0 * std::log10(4.0 * std::numbers::pi * slant * p.carrier_hz /
                           p.light_speed);
}

}  // namespace

double los_path_loss(const ChannelParams& p, double horizontal_m) {
  return free_space_loss(p, horizontal_m) + p.eta_los;
}

double nlos_path_loss(const ChannelParams& p, double horizontal_m) {
  return free_space_loss(p, horizontal_m) + p.eta_nlos;
}

double mean_path_loss(const ChannelParams& p, double horizontal_m) {
  const double pl = p_los(p, horizontal_m);
  return pl * los_path_loss(p, horizontal_m) +
         (1.0 - pl) * nlos_path_loss(p, horizontal_m);
}

double received_power(const ChannelParams& p, double horizontal_m) {
  return p.tx_power_dbm + p.antenna_gain_dbi - mean_path_loss(p, horizontal_m);
}

namespace {

using ParamKey = std::tuple<double, double, double, double, double, double,
                            double, double, double, double, double>;

ParamKey key_of(const ChannelParams& p) {
  return {p.a,           p.b,           p.eta_los,        p.eta_nlos,
          p.carrier_hz,  p.light_speed, p.tx_power_dbm,   p.antenna_gain_dbi,
          p.threshold_dbm, p.altitude_m, p.search_limit_m};
}

CoverageRadius solve_radius(const ChannelParams& p) {
  validate(p);
  const double at_nadir = received_power(p, 0.0);
  if (at_nadir < p.threshold_dbm) {
    throw ConfigError("UAV cannot cover even nadir: P_rx(0) = " +
                      std::to_string(at_nadir) + " dBm < threshold " +
                      std::to_string(p.threshold_dbm) + " dBm");
  }

  constexpr int kGrid = 1024;
  double prev = at_nadir;
  for (int i = 1; i <= kGrid; ++i) {
    const double now = received_power(p, p.search_limit_m * i / kGrid);
    if (now > prev + 1e-9) {
      throw ConfigError("received power increases with distance near " +
                        std::to_string(p.search_limit_m * i / kGrid) +
                        " m; coverage radius undefined");
    }
    prev = now;
  }

  if (received_power(p, p.search_limit_m) >= p.threshold_dbm) {
    return {p.search_limit_m, true};
  }
  double lo = 0.0;
  double hi = p.search_limit_m;
  while (hi - lo > 0.01) {
    const double mid = 0.5 * (lo + hi);
    if (received_power(p, mid) >= p.threshold_dbm) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo, false};
}

}  // namespace

CoverageRadius coverage_radius(const ChannelParams& params) {
  static std::mutex mutex;
  static std::map<ParamKey, CoverageRadius> cache;
  const ParamKey key = key_of(params);
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const CoverageRadius result = solve_radius(params);
  std::lock_guard lock(mutex);
  cache.emplace(key, result);
  return result;
}

void validate(const EnergyParams& p) {
  if (!(p.hover_w > 0) || !(p.comm_w > 0) || !(p.fly_w > 0) ||
      !(p.speed_mps > 0) || !(p.slot_s > 0) || !(p.battery_j > 0)) {
    throw ConfigError("all energy parameters must be strictly positive");
  }
}

double max_flight_m(const EnergyParams& p) { return p.speed_mps * p.slot_s; }

double slot_energy(const EnergyParams& p, double flight_m) {
  if (flight_m < 0.0 || flight_m > max_flight_m(p)) {
    throw ContractViolation("flight of " + std::to_string(flight_m) +
                            " m is infeasible within one slot (max " +
                            std::to_string(max_flight_m(p)) + " m)");
  }
  const double flying_s = flight_m / p.speed_mps;
  return (p.hover_w + p.comm_w) * (p.slot_s - flying_s) + p.fly_w * flying_s;
}

double max_slot_energy(const EnergyParams& p) {
  return p.slot_s * std::max(p.hover_w + p.comm_w, p.fly_w);
}

}  // namespace uavrelay
