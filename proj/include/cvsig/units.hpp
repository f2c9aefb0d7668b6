#pragma once

// Unit conversions. Internally distances are miles, speeds mph, times seconds;
// the simulator works in meters and m/s and converts at its boundary.

namespace cvsig::units {

inline constexpr double kMetersPerMile = 1609.344;
inline constexpr double kSecondsPerHour = 3600.0;
inline constexpr double kMpsPerMph = kMetersPerMile / kSecondsPerHour;

constexpr double miles_to_meters(double mi) { return mi * kMetersPerMile; }
constexpr double meters_to_miles(double m) { return m / kMetersPerMile; }
constexpr double mph_to_mps(double mph) { return mph * kMpsPerMph; }
constexpr double mps_to_mph(double mps) { return mps / kMpsPerMph; }
constexpr double hours_to_seconds(double h) { return h * kSecondsPerHour; }
constexpr double seconds_to_hours(double s) { return s / kSecondsPerHour; }

/// Flow in veh/h to veh/s.
constexpr double per_hour_to_per_second(double q) { return q / kSecondsPerHour; }

/// Travel time in seconds for a distance in miles at a speed in mph.
constexpr double travel_seconds(double miles, double mph) {
  return hours_to_seconds(miles / mph);
}

}  // namespace cvsig::units
