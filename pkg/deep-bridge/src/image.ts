import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'

export interface RawImage {
  width: number
  height: number
  /** RGB, row-major, 3 bytes per pixel */
  data: Uint8Array
}

export function readPng(path: string): RawImage {
  const png = PNG.sync.read(fs.readFileSync(path))
  const pixels = png.width * png.height
  const rgb = new Uint8Array(pixels * 3)
  for (let i = 0; i < pixels; i++) {
    rgb[i * 3] = png.data[i * 4]
    rgb[i * 3 + 1] = png.data[i * 4 + 1]
    rgb[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { width: png.width, height: png.height, data: rgb }
}

/** Pad to a square with the image's mean color so resizing keeps aspect. */
export function padToSquare(img: RawImage): RawImage {
  const side = Math.max(img.width, img.height)
  if (img.width === img.height) return img
  const mean = [0, 0, 0]
  const pixels = img.width * img.height
  for (let i = 0; i < pixels; i++) {
    mean[0] += img.data[i * 3]
    mean[1] += img.data[i * 3 + 1]
    mean[2] += img.data[i * 3 + 2]
  }
  const fill = mean.map((v) => Math.round(v / pixels))
  const out = new Uint8Array(side * side * 3)
  for (let i = 0; i < side * side; i++) {
    out[i * 3] = fill[0]
    out[i * 3 + 1] = fill[1]
    out[i * 3 + 2] = fill[2]
  }
  const offsetX = Math.floor((side - img.width) / 2)
  const offsetY = Math.floor((side - img.height) / 2)
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const src = (y * img.width + x) * 3
      const dst = ((y + offsetY) * side + (x + offsetX)) * 3
      out[dst] = img.data[src]
      out[dst + 1] = img.data[src + 1]
      out[dst + 2] = img.data[src + 2]
    }
  }
  return { width: side, height: side, data: out }
}

const CHANNEL_MEAN = [0.485, 0.456, 0.406]
const CHANNEL_STD = [0.229, 0.224, 0.225]

/** Square-pad, bilinear-resize and channel-normalize one crop: [1,S,S,3]. */
export function toInputTensor(img: RawImage, size: number): tf.Tensor4D {
  const square = padToSquare(img)
  return tf.tidy(() => {
    const raw = tf.tensor3d(square.data, [square.height, square.width, 3], 'float32')
    const resized = tf.image.resizeBilinear(raw as tf.Tensor3D, [size, size])
    const scaled = resized.div(255.0)
    const normalized = scaled.sub(tf.tensor1d(CHANNEL_MEAN)).div(tf.tensor1d(CHANNEL_STD))
    return normalized.expandDims(0) as tf.Tensor4D
  })
}
