/**
 * Minimal safetensors reader/writer: enough to pull float32/int64 tensors
 * out of a model checkpoint and to build small fixture files in tests.
 */

import { readFileSync, writeFileSync } from "node:fs";

export interface TensorInfo {
  dtype: string;
  shape: number[];
  dataOffsets: [number, number];
}

export class SafeTensors {
  private header: Record<string, TensorInfo> = {};
  private data: Buffer;

  constructor(buf: Buffer) {
    if (buf.length < 8) throw new Error("safetensors: file too short");
    const headerLen = Number(buf.readBigUInt64LE(0));
    if (8 + headerLen > buf.length) throw new Error("safetensors: truncated header");
    const headerJson = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf8"));
    for (const [name, info] of Object.entries<any>(headerJson)) {
      if (name === "__metadata__") continue;
      this.header[name] = {
        dtype: info.dtype,
        shape: info.shape,
        dataOffsets: info.data_offsets,
      };
    }
    this.data = buf.subarray(8 + headerLen);
  }

  static fromFile(path: string): SafeTensors {
    return new SafeTensors(readFileSync(path));
  }

  names(): string[] {
    return Object.keys(this.header);
  }

  has(name: string): boolean {
    return name in this.header;
  }

  info(name: string): TensorInfo {
    const info = this.header[name];
    if (!info) throw new Error(`safetensors: missing tensor ${name}`);
    return info;
  }

  /** Raw bytes of one tensor. */
  bytes(name: string): Buffer {
    const { dataOffsets } = this.info(name);
    const [start, end] = dataOffsets;
    if (end > this.data.length) throw new Error(`safetensors: ${name} offsets out of range`);
    return this.data.subarray(start, end);
  }

  f32(name: string): { shape: number[]; data: Float32Array } {
    const info = this.info(name);
    if (info.dtype !== "F32") {
      throw new Error(`safetensors: ${name} has dtype ${info.dtype}, expected F32`);
    }
    const raw = this.bytes(name);
    const out = new Float32Array(raw.length / 4);
    for (let i = 0; i < out.length; i++) out[i] = raw.readFloatLE(4 * i);
    const count = info.shape.reduce((a, b) => a * b, 1);
    if (count !== out.length) throw new Error(`safetensors: ${name} size mismatch`);
    return { shape: info.shape, data: out };
  }

  i64(name: string): { shape: number[]; data: number[] } {
    const info = this.info(name);
    if (info.dtype !== "I64") {
      throw new Error(`safetensors: ${name} has dtype ${info.dtype}, expected I64`);
    }
    const raw = this.bytes(name);
    const out: number[] = [];
    for (let i = 0; i < raw.length; i += 8) out.push(Number(raw.readBigInt64LE(i)));
    return { shape: info.shape, data: out };
  }
}

export interface WriteTensor {
  dtype: "F32" | "I64";
  shape: number[];
  data: Float32Array | BigInt64Array;
}

export function writeSafeTensors(path: string, tensors: Record<string, WriteTensor>): void {
  const header: Record<string, unknown> = {};
  const chunks: Buffer[] = [];
  let offset = 0;
  for (const [name, t] of Object.entries(tensors)) {
    const buf = Buffer.from(t.data.buffer.slice(t.data.byteOffset, t.data.byteOffset + t.data.byteLength));
    header[name] = { dtype: t.dtype, shape: t.shape, data_offsets: [offset, offset + buf.length] };
    chunks.push(buf);
    offset += buf.length;
  }
  const headerBuf = Buffer.from(JSON.stringify(header), "utf8");
  const lenBuf = Buffer.alloc(8);
  lenBuf.writeBigUInt64LE(BigInt(headerBuf.length));
  writeFileSync(path, Buffer.concat([lenBuf, headerBuf, ...chunks]));
}
