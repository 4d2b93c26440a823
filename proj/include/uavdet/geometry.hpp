#pragma once

#include <array>
#include <optional>

namespace uavdet {

// Axis-aligned box in pixel units.
//
// Stored as corners so that interchange formats (which carry corners) round-trip
// bit-exactly; center-size accessors are derived.
class Box {
public:
    static Box from_center(double cx, double cy, double w, double h);
    static Box from_corners(double x0, double y0, double x1, double y1);

    double x0() const noexcept { return x0_; }
    double y0() const noexcept { return y0_; }
    double x1() const noexcept { return x1_; }
    double y1() const noexcept { return y1_; }

    double cx() const noexcept { return 0.5 * (x0_ + x1_); }
    double cy() const noexcept { return 0.5 * (y0_ + y1_); }
    double w() const noexcept { return x1_ - x0_; }
    double h() const noexcept { return y1_ - y0_; }
    double area() const noexcept { return w() * h(); }

    std::array<double, 4> corners() const noexcept { return {x0_, y0_, x1_, y1_}; }
    std::array<double, 4> center_size() const noexcept { return {cx(), cy(), w(), h()}; }

    bool operator==(const Box&) const = default;

private:
    Box(double x0, double y0, double x1, double y1) noexcept
        : x0_(x0), y0_(y0), x1_(x1), y1_(y1) {}

    double x0_, y0_, x1_, y1_;
};

struct GaussianBox {
    std::array<double, 2> mean;
    double var_x;
    double var_y;
};

// Integer sub-region [x0, x1) x [y0, y1) of an image_w x image_h image.
class CropWindow {
public:
    CropWindow(int x0, int y0, int x1, int y1, int image_w, int image_h);
    static CropWindow whole(int image_w, int image_h) { return {0, 0, image_w, image_h, image_w, image_h}; }

    int x0() const noexcept { return x0_; }
    int y0() const noexcept { return y0_; }
    int x1() const noexcept { return x1_; }
    int y1() const noexcept { return y1_; }
    int width() const noexcept { return x1_ - x0_; }
    int height() const noexcept { return y1_ - y0_; }
    int image_w() const noexcept { return image_w_; }
    int image_h() const noexcept { return image_h_; }

    Box as_box() const { return Box::from_corners(x0_, y0_, x1_, y1_); }
    bool is_whole_image() const noexcept {
        return x0_ == 0 && y0_ == 0 && x1_ == image_w_ && y1_ == image_h_;
    }

    bool operator==(const CropWindow&) const = default;

private:
    int x0_, y0_, x1_, y1_, image_w_, image_h_;
};

double iou(const Box& a, const Box& b) noexcept;
double intersection_area(const Box& a, const Box& b) noexcept;

Box enclosing_box(const Box& a, const Box& b);

GaussianBox to_gaussian(const Box& b) noexcept;

// Intersection of a box with a rectangle; nullopt when the overlap has no area.
std::optional<Box> clip(const Box& b, double x0, double y0, double x1, double y1);

// Box in window-local coordinates, clipped to the window.
struct WindowBox {
    Box box;
    double visible_fraction;  // clipped area / full area
};

// nullopt means "not visible" (no overlap with the window).
std::optional<WindowBox> image_to_window(const Box& b, const CropWindow& win);

// scale_x/scale_y convert resized-window pixels to window pixels
// (window width / resized width). The result is clamped to the image; a box
// entirely outside the image throws ValidationError.
Box window_to_image(const Box& b, const CropWindow& win, double scale_x = 1.0, double scale_y = 1.0);

}  // namespace uavdet
