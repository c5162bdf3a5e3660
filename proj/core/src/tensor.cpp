#include "mer/tensor.hpp"

namespace mer {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ArgumentError("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t({1, img.channels(), img.height(), img.width()});
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) t.at(0, c, y, x) = static_cast<T>(img.at(y, x, c));
  return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int n) {
  if (t.rank() != 4) throw ArgumentError("tensor_to_image needs NCHW, got " + shape_string(t.shape()));
  Image img(t.dim(2), t.dim(3), t.dim(1));
  for (int c = 0; c < t.dim(1); ++c)
    for (int y = 0; y < t.dim(2); ++y)
      for (int x = 0; x < t.dim(3); ++x) img.at(y, x, c) = static_cast<float>(t.at(n, c, y, x));
  return img;
}

template <typename T>
Tensor<T> mask_to_tensor(const Mask& mask, int channels) {
  Tensor<T> t({1, channels, mask.height(), mask.width()});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x) t.at(0, c, y, x) = mask.at(y, x) ? T(1) : T(0);
  return t;
}

template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);
template Image tensor_to_image<float>(const Tensor<float>&, int);
template Image tensor_to_image<double>(const Tensor<double>&, int);
template Tensor<float> mask_to_tensor<float>(const Mask&, int);
template Tensor<double> mask_to_tensor<double>(const Mask&, int);

}  // namespace mer
