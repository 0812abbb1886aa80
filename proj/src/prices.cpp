#include "storectl/prices.hpp"

#include "storectl/sim.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace storectl {
namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string message(const std::string& source, int line, const std::string& what) {
  std::ostringstream os;
  os << source << ':' << line << ": " << what;
  return os.str();
}

}  // namespace

PriceParseError::PriceParseError(const std::string& source, int line, const std::string& what)
    : std::runtime_error(message(source, line, what)), line_(line) {}

std::int64_t parse_timestamp(const std::string& ts) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0, used = 0;
  const int n = std::sscanf(ts.c_str(), "%4d-%2d-%2dT%2d:%2d%n", &y, &mo, &d, &h, &mi, &used);
  if (n < 5) throw std::invalid_argument("malformed timestamp '" + ts + "'");
  std::size_t pos = std::size_t(used);
  if (pos < ts.size()) {
    int more = 0;
    if (std::sscanf(ts.c_str() + pos, ":%2d%n", &sec, &more) != 1 || pos + std::size_t(more) != ts.size() || sec != 0)
      throw std::invalid_argument("malformed timestamp '" + ts + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{unsigned(mo)}, day{unsigned(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59) throw std::invalid_argument("invalid date '" + ts + "'");
  return std::int64_t(sys_days{ymd}.time_since_epoch().count()) * 1440 + h * 60 + mi;
}

std::string format_timestamp(std::int64_t minutes) {
  using namespace std::chrono;
  std::int64_t day_count = minutes >= 0 ? minutes / 1440 : -((-minutes + 1439) / 1440);
  const std::int64_t rem = minutes - day_count * 1440;
  const year_month_day ymd{sys_days{days{day_count}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()), int(rem / 60), int(rem % 60));
  return buf;
}

PriceSeries read_prices(std::istream& in, const std::string& source) {
  PriceSeries out;
  std::vector<double> prices;
  std::string line;
  int lineno = 0;
  bool header = false;
  std::int64_t prev = 0;
  std::int64_t step = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "timestamp,price") throw PriceParseError(source, lineno, "expected header 'timestamp,price'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw PriceParseError(source, lineno, "expected two comma-separated columns");
    const std::string ts = trim(line.substr(0, comma));
    const std::string val = trim(line.substr(comma + 1));
    std::int64_t minutes = 0;
    try {
      minutes = parse_timestamp(ts);
    } catch (const std::invalid_argument& e) {
      throw PriceParseError(source, lineno, e.what());
    }
    double price = 0.0;
    const auto [ptr, ec] = std::from_chars(val.data(), val.data() + val.size(), price);
    if (ec != std::errc() || ptr != val.data() + val.size() || !std::isfinite(price))
      throw PriceParseError(source, lineno, "non-numeric price '" + val + "'");
    if (!prices.empty()) {
      if (minutes == prev) throw PriceParseError(source, lineno, "duplicate timestamp " + ts);
      if (minutes < prev) throw PriceParseError(source, lineno, "timestamp " + ts + " is not increasing");
      if (prices.size() == 1) step = minutes - prev;
      else if (minutes - prev != step) throw PriceParseError(source, lineno, "uneven spacing before " + ts);
    }
    prev = minutes;
    out.timestamps.push_back(ts);
    prices.push_back(price);
  }
  if (!header) throw PriceParseError(source, lineno, "missing header 'timestamp,price'");
  if (prices.empty()) throw PriceParseError(source, lineno, "no price rows");
  out.prices = Eigen::Map<const Eigen::VectorXd>(prices.data(), Eigen::Index(prices.size()));
  out.step_minutes = step > 0 ? int(step) : 30;
  return out;
}

PriceSeries read_prices_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PriceParseError(path, 0, "cannot open file");
  return read_prices(in, path);
}

void write_prices(std::ostream& out, const PriceSeries& series) {
  out << "timestamp,price\n";
  char buf[64];
  for (int t = 0; t < series.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%.17g", series.prices(t));
    out << series.timestamps[std::size_t(t)] << ',' << buf << '\n';
  }
}

void write_prices_file(const std::string& path, const PriceSeries& series) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_prices(out, series);
}

PriceSeries synth_prices(int days, double base, double amplitude, double noise_sd, std::uint64_t seed,
                         const std::string& start) {
  if (days < 0) throw std::invalid_argument("days must be nonnegative");
  const int T = 48 * days;
  const std::int64_t t0 = parse_timestamp(start);
  PriceSeries out;
  out.prices.resize(T);
  out.timestamps.reserve(std::size_t(T));
  for (int t = 0; t < T; ++t) {
    double c = base + amplitude * std::sin(2.0 * std::numbers::pi * t / 48.0 - std::numbers::pi / 2.0);
    if (noise_sd > 0.0) {
      // Box-Muller on a per-period substream.
      SubstreamRng rng(seed, std::uint64_t(t));
      const double u1 = 1.0 - rng.uniform();
      const double u2 = rng.uniform();
      c += noise_sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    out.prices(t) = std::max(c, 0.01 * base);
    out.timestamps.push_back(format_timestamp(t0 + 30 * t));
  }
  return out;
}

}  // namespace storectl
