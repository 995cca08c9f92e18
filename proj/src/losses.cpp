#include "spagan/losses.hpp"

#include "spagan/text.hpp"

#include <fstream>

namespace spagan {

bool LossRecord::allFinite() const {
    return std::isfinite(dLossX) && std::isfinite(dLossY) && std::isfinite(gAdvLoss) && std::isfinite(fAdvLoss) &&
           std::isfinite(cycLoss) && std::isfinite(fmLoss) && std::isfinite(totalGen);
}

std::string_view LossRecord::csvHeader() { return "step,dLossX,dLossY,gAdvLoss,fAdvLoss,cycLoss,fmLoss,totalGen"; }

std::string LossRecord::csvRow() const {
    std::string row = std::to_string(step);
    for (double v : {dLossX, dLossY, gAdvLoss, fAdvLoss, cycLoss, fmLoss, totalGen}) {
        row += ',';
        row += formatDouble(v);
    }
    return row;
}

LossRecord LossRecord::parseCsvRow(std::string_view row) {
    const auto fields = splitOn(trim(row), ',');
    if (fields.size() != 8) {
        throw LossError("loss CSV row has " + std::to_string(fields.size()) + " fields, expected 8");
    }
    LossRecord r;
    r.step = parseLong(fields[0]);
    r.dLossX = parseDouble(fields[1]);
    r.dLossY = parseDouble(fields[2]);
    r.gAdvLoss = parseDouble(fields[3]);
    r.fAdvLoss = parseDouble(fields[4]);
    r.cycLoss = parseDouble(fields[5]);
    r.fmLoss = parseDouble(fields[6]);
    r.totalGen = parseDouble(fields[7]);
    return r;
}

std::vector<LossRecord> readLossCsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw LossError("cannot open loss CSV " + path);
    }
    std::string line;
    if (!std::getline(in, line) || trim(line) != LossRecord::csvHeader()) {
        throw LossError("loss CSV " + path + " has an unexpected header");
    }
    std::vector<LossRecord> rows;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) {
            rows.push_back(LossRecord::parseCsvRow(line));
        }
    }
    return rows;
}

} // namespace spagan
