#pragma once

namespace uavrelay {

// Air-to-ground channel. Defaults are a conventional dense-urban setting;
// none of them is a calibrated measurement.
struct ChannelParams {
  double a = 9.61;             // S-curve parameter
  double b = 0.16;             // S-curve parameter, 1/degree
  double eta_los = 1.0;        // dB
  double eta_nlos = 20.0;      // dB
  double carrier_hz = 2.0e9;
  double light_speed = 299792458.0;
  double tx_power_dbm = 30.0;
  double antenna_gain_dbi = 0.0;
  double threshold_dbm = -80.0;
  double altitude_m = 100.0;
  double search_limit_m = 10000.0;  // upper bound for the radius search

  bool operator==(const ChannelParams&) const = default;
};

// Throws ConfigError when an invariant is violated.
void validate(const ChannelParams& params);

// Elevation angle in degrees; horizontal distance 0 gives 90.
double elevation_deg(const ChannelParams& params, double horizontal_m);
double p_los(const ChannelParams& params, double horizontal_m);
// Free-space loss over the slant range plus eta, for LoS and NLoS.
double los_path_loss(const ChannelParams& params, double horizontal_m);
double nlos_path_loss(const ChannelParams& params, double horizontal_m);
double mean_path_loss(const ChannelParams& params, double horizontal_m);
double received_power(const ChannelParams& params, double horizontal_m);

struct CoverageRadius {
  double radius_m = 0.0;
  bool unbounded = false;  // threshold never binds within search_limit_m
};

// Largest horizontal distance with P_rx >= threshold, bisected to 0.01 m.
// ConfigError when even the nadir is not covered or P_rx is found to be
// increasing somewhere on the search interval. Results are memoized.
CoverageRadius coverage_radius(const ChannelParams& params);

struct EnergyParams {
  double hover_w = 100.0;   // epsilon1
  double comm_w = 20.0;     // epsilon2
  double fly_w = 200.0;     // epsilon3
  double speed_mps = 10.0;  // v_u
  double slot_s = 60.0;     // tau
  double battery_j = 500000.0;

  bool operator==(const EnergyParams&) const = default;
};

void validate(const EnergyParams& params);

double max_flight_m(const EnergyParams& params);
// Hover-and-transmit energy for one slot with flight distance l.
// ContractViolation if l exceeds speed * slot.
double slot_energy(const EnergyParams& params, double flight_m);
// Worst case over feasible flights: slot * max(hover + comm, fly).
double max_slot_energy(const EnergyParams& params);

}  // namespace uavrelay
