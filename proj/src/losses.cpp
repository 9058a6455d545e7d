#include "cdsp/losses.hpp"

#include <cstdio>

namespace cdsp {

LossSwitches LossSwitches::parse(const std::string& comma_list) {
  LossSwitches sw;
  std::string item;
  std::istringstream is(comma_list);
  while (std::getline(is, item, ',')) {
    if (item.empty()) continue;
    if (item == "segs") sw.segs = true;
    else if (item == "segc") sw.segc = true;
    else if (item == "ds") sw.ds = true;
    else if (item == "dc") sw.dc = true;
    else if (item == "lorm") sw.lorm = true;
    else fail(errc::invalid, "unknown loss switch '", item, "'");
  }
  return sw;
}

std::string LossSwitches::to_string() const {
  std::string out;
  auto app = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  app(segs, "segs");
  app(segc, "segc");
  app(ds, "ds");
  app(dc, "dc");
  app(lorm, "lorm");
  return out;
}

std::string loss_csv_row(int64_t step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g",
                static_cast<long long>(step), r.segs, r.segc, r.ds, r.dc, r.lorm, r.total);
  return buf;
}

}  // namespace cdsp
