import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { describe, expect, it } from 'vitest'

import { checkRecord, EXPECTED_DIMS, readManifest, recordToJson, validateFile } from '../src/records'

function tmpFile(lines: string[]): string {
  const file = path.join(fs.mkdtempSync(path.join(os.tmpdir(), 'db-')), 'f.jsonl')
  fs.writeFileSync(file, lines.join('\n') + '\n')
  return file
}

function goodRecord(overrides: Record<string, unknown> = {}) {
  return {
    window_id: 'img0_w000',
    image_id: 'img0',
    bbox: [0, 0, 9, 9],
    label: 'positive',
    extractor: 'resnet50',
    values: new Array(2048).fill(0.5),
    ...overrides,
  }
}

describe('manifest parsing', () => {
  it('reads well-formed entries', () => {
    const file = tmpFile([
      JSON.stringify({ window_id: 'a_w000', image_id: 'a', bbox: [0, 0, 4, 4], label: 'negative' }),
    ])
    const entries = readManifest(file)
    expect(entries).toHaveLength(1)
    expect(entries[0].bbox).toEqual([0, 0, 4, 4])
  })

  it('rejects missing fields with line numbers', () => {
    const file = tmpFile([JSON.stringify({ window_id: 'a', image_id: 'a', bbox: [0, 0, 1, 1] })])
    expect(() => readManifest(file)).toThrow(/:1: missing field label/)
  })

  it('rejects unknown labels', () => {
    const file = tmpFile([
      JSON.stringify({ window_id: 'a', image_id: 'a', bbox: [0, 0, 1, 1], label: 'maybe' }),
    ])
    expect(() => readManifest(file)).toThrow(/unknown label/)
  })
})

describe('record schema', () => {
  it('accepts a compliant record', () => {
    expect(checkRecord(goodRecord())).toBeNull()
  })

  it('pins dimensionality per architecture', () => {
    expect(EXPECTED_DIMS).toEqual({ conventional: 28, vgg16: 4096, resnet50: 2048, alexnet: 4096 })
    expect(checkRecord(goodRecord({ values: new Array(2047).fill(0) }))).toMatch(/expects 2048/)
  })

  it('rejects non-finite values', () => {
    const rec = goodRecord()
    ;(rec.values as number[])[7] = Number.NaN
    expect(checkRecord(rec)).toMatch(/value 7 is not a finite number/)
  })

  it('rejects unknown fields', () => {
    expect(checkRecord(goodRecord({ score: 1 }))).toMatch(/unknown field score/)
  })

  it('round-trips through JSON', () => {
    const rec = goodRecord()
    const parsed = JSON.parse(recordToJson(rec as any))
    expect(checkRecord(parsed, 'resnet50')).toBeNull()
  })
})

describe('file validation', () => {
  it('passes a clean file', () => {
    const file = tmpFile([recordToJson(goodRecord() as any)])
    const { count, violations } = validateFile(file, 'resnet50')
    expect(count).toBe(1)
    expect(violations).toEqual([])
  })

  it('reports malformed lines with their number', () => {
    const file = tmpFile([recordToJson(goodRecord() as any), 'not json'])
    const { violations } = validateFile(file)
    expect(violations).toHaveLength(1)
    expect(violations[0].line).toBe(2)
  })

  it('flags extractor/arch mismatches', () => {
    const file = tmpFile([recordToJson(goodRecord() as any)])
    const { violations } = validateFile(file, 'vgg16')
    expect(violations[0].message).toMatch(/does not match expected vgg16/)
  })
})
