// Price series: CSV ingestion with `timestamp,price` rows, emission, and a
// synthetic half-hourly generator with a daily cycle.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace storectl {

class PriceParseError : public std::runtime_error {
 public:
  PriceParseError(const std::string& source, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

struct PriceSeries {
  std::vector<std::string> timestamps;  // YYYY-MM-DDTHH:MM
  Eigen::VectorXd prices;
  int step_minutes = 30;

  int size() const { return static_cast<int>(prices.size()); }
};

/// Minutes since 1970-01-01T00:00 for "YYYY-MM-DDTHH:MM" (seconds ":SS" allowed
/// when zero). Throws std::invalid_argument on malformed input.
std::int64_t parse_timestamp(const std::string& ts);
std::string format_timestamp(std::int64_t minutes);

/// Reads a header line `timestamp,price` followed by rows. Timestamps must be
/// strictly increasing with a constant spacing.
PriceSeries read_prices(std::istream& in, const std::string& source = "<stream>");
PriceSeries read_prices_file(const std::string& path);

/// Writes prices with 17 significant digits, so reading back is exact.
void write_prices(std::ostream& out, const PriceSeries& series);
void write_prices_file(const std::string& path, const PriceSeries& series);

/// base + amplitude sin(2 pi t / 48 - pi / 2) + N(0, noise_sd^2), floored at
/// 0.01 base, for 48 periods a day starting at `start`.
PriceSeries synth_prices(int days, double base, double amplitude, double noise_sd, std::uint64_t seed,
                         const std::string& start = "2011-01-01T00:00");

}  // namespace storectl
