#include "pamunet/flops.hpp"

#include <sstream>

namespace pamunet {

void FlopsReport::add(std::string layer, std::string kind, std::uint64_t macs) {
    layers.push_back(Entry{std::move(layer), std::move(kind), macs});
}

void FlopsReport::append(const FlopsReport& other) {
    layers.insert(layers.end(), other.layers.begin(), other.layers.end());
}

std::uint64_t FlopsReport::total_macs() const {
    std::uint64_t total = 0;
    for (const Entry& e : layers) total += e.macs;
    return total;
}

std::string FlopsReport::to_csv() const {
    std::ostringstream os;
    os << "layer,kind,macs,flops\n";
    for (const Entry& e : layers) os << e.layer << ',' << e.kind << ',' << e.macs << ',' << 2 * e.macs << '\n';
    os << "total,," << total_macs() << ',' << total_flops() << '\n';
    return os.str();
}

namespace flops {

namespace {
std::uint64_t u(int v) { return static_cast<std::uint64_t>(v); }
}  // namespace

std::uint64_t conv2d_macs(int batch, int kernel, int c_in, int c_out, int h_out, int w_out) {
    return u(batch) * u(kernel) * u(kernel) * u(c_in) * u(c_out) * u(h_out) * u(w_out);
}

std::uint64_t depthwise_macs(int batch, int kernel, int channels, int h_out, int w_out) {
    return u(batch) * u(kernel) * u(kernel) * u(channels) * u(h_out) * u(w_out);
}

std::uint64_t pointwise_macs(int batch, int c_in, int c_out, int h, int w) {
    return u(batch) * u(c_in) * u(c_out) * u(h) * u(w);
}

std::uint64_t conv_transpose_macs(int batch, int kernel, int c_in, int c_out, int h_in, int w_in) {
    return u(batch) * u(kernel) * u(kernel) * u(c_in) * u(c_out) * u(h_in) * u(w_in);
}

std::uint64_t attention_macs(int batch, int queries, int keys, int depth) {
    return u(batch) * u(queries) * u(keys) * u(depth);
}

}  // namespace flops
}  // namespace pamunet
