#include "uavdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uavdet/error.hpp"

namespace uavdet {

namespace {

bool finite(double v) { return std::isfinite(v); }

}  // namespace

Box Box::from_center(double cx, double cy, double w, double h) {
    if (!(finite(cx) && finite(cy) && finite(w) && finite(h)))
        throw ValidationError("box has non-finite parameters");
    if (!(w > 0.0 && h > 0.0))
        throw ValidationError("box must have positive width and height, got w=" + std::to_string(w) +
                              " h=" + std::to_string(h));
    return from_corners(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

Box Box::from_corners(double x0, double y0, double x1, double y1) {
    if (!(finite(x0) && finite(y0) && finite(x1) && finite(y1)))
        throw ValidationError("box has non-finite corners");
    if (!(x0 < x1 && y0 < y1))
        throw ValidationError("box corners must satisfy x0 < x1 and y0 < y1");
    return Box(x0, y0, x1, y1);
}

CropWindow::CropWindow(int x0, int y0, int x1, int y1, int image_w, int image_h)
    : x0_(x0), y0_(y0), x1_(x1), y1_(y1), image_w_(image_w), image_h_(image_h) {
    if (!(0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h))
        throw ValidationError("crop window (" + std::to_string(x0) + "," + std::to_string(y0) + "," +
                              std::to_string(x1) + "," + std::to_string(y1) + ") outside image " +
                              std::to_string(image_w) + "x" + std::to_string(image_h));
}

double intersection_area(const Box& a, const Box& b) noexcept {
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

double iou(const Box& a, const Box& b) noexcept {
    const double inter = intersection_area(a, b);
    if (inter == 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

Box enclosing_box(const Box& a, const Box& b) {
    return Box::from_corners(std::min(a.x0(), b.x0()), std::min(a.y0(), b.y0()),
                             std::max(a.x1(), b.x1()), std::max(a.y1(), b.y1()));
}

GaussianBox to_gaussian(const Box& b) noexcept {
    const double hw = 0.5 * b.w();
    const double hh = 0.5 * b.h();
    return {{b.cx(), b.cy()}, hw * hw, hh * hh};
}

std::optional<Box> clip(const Box& b, double x0, double y0, double x1, double y1) {
    const double cx0 = std::max(b.x0(), x0);
    const double cy0 = std::max(b.y0(), y0);
    const double cx1 = std::min(b.x1(), x1);
    const double cy1 = std::min(b.y1(), y1);
    if (!(cx0 < cx1 && cy0 < cy1)) return std::nullopt;
    return Box::from_corners(cx0, cy0, cx1, cy1);
}

std::optional<WindowBox> image_to_window(const Box& b, const CropWindow& win) {
    const auto clipped = clip(b, win.x0(), win.y0(), win.x1(), win.y1());
    if (!clipped) return std::nullopt;
    const Box local = Box::from_corners(clipped->x0() - win.x0(), clipped->y0() - win.y0(),
                                        clipped->x1() - win.x0(), clipped->y1() - win.y0());
    return WindowBox{local, clipped->area() / b.area()};
}

Box window_to_image(const Box& b, const CropWindow& win, double scale_x, double scale_y) {
    if (!(scale_x > 0.0 && scale_y > 0.0))
        throw ValidationError("window_to_image: scale factors must be positive");
    const double x0 = win.x0() + b.x0() * scale_x;
    const double y0 = win.y0() + b.y0() * scale_y;
    const double x1 = win.x0() + b.x1() * scale_x;
    const double y1 = win.y0() + b.y1() * scale_y;
    const Box mapped = Box::from_corners(x0, y0, x1, y1);
    auto clamped = clip(mapped, 0.0, 0.0, win.image_w(), win.image_h());
    if (!clamped) throw ValidationError("window_to_image: box lies entirely outside the image");
    return *clamped;
}

}  // namespace uavdet
