use crate::error::VideoError;

/// One 8-bit sample plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, VideoError> {
        if data.len() != width * height {
            return Err(VideoError::PlaneSize { expected: width * height, got: data.len() });
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane { width, height, data: vec![value; width * height] }
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Normalized f32 copy in [0, 1], shaped for the model input layout.
    pub fn to_unit_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// Symmetric-reflection pad on the right/bottom to `new_w x new_h`.
    pub fn pad_to(&self, new_w: usize, new_h: usize) -> Plane {
        assert!(new_w >= self.width && new_h >= self.height);
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
        let mut data = vec![0u8; new_w * new_h];
        for y in 0..new_h {
            let sy = reflect(y, self.height);
            for x in 0..new_w {
                data[y * new_w + x] = self.at(sy, reflect(x, self.width));
            }
        }
        Plane { width: new_w, height: new_h, data }
    }

    pub fn crop_to(&self, new_w: usize, new_h: usize) -> Plane {
        assert!(new_w <= self.width && new_h <= self.height);
        let mut data = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + new_w]);
        }
        Plane { width: new_w, height: new_h, data }
    }
}

/// Planar YUV 4:2:0 picture: full-size luma, half-size chroma per axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
}

impl Frame {
    pub fn new(y: Plane, u: Plane, v: Plane) -> Result<Self, VideoError> {
        if y.width == 0 || y.height == 0 || y.width % 2 != 0 || y.height % 2 != 0 {
            return Err(VideoError::BadDimensions { width: y.width, height: y.height });
        }
        for c in [&u, &v] {
            if c.width != y.width / 2 || c.height != y.height / 2 {
                return Err(VideoError::PlaneSize {
                    expected: (y.width / 2) * (y.height / 2),
                    got: c.data.len(),
                });
            }
        }
        Ok(Frame { y, u, v })
    }

    pub fn filled(width: usize, height: usize, luma: u8, chroma: u8) -> Result<Self, VideoError> {
        Frame::new(
            Plane::filled(width, height, luma),
            Plane::filled(width / 2, height / 2, chroma),
            Plane::filled(width / 2, height / 2, chroma),
        )
    }

    pub fn gray(width: usize, height: usize, luma: u8) -> Result<Self, VideoError> {
        Frame::filled(width, height, luma, 128)
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }

    pub fn pad_to(&self, new_w: usize, new_h: usize) -> Frame {
        Frame {
            y: self.y.pad_to(new_w, new_h),
            u: self.u.pad_to(new_w / 2, new_h / 2),
            v: self.v.pad_to(new_w / 2, new_h / 2),
        }
    }

    pub fn crop_to(&self, new_w: usize, new_h: usize) -> Frame {
        Frame {
            y: self.y.crop_to(new_w, new_h),
            u: self.u.crop_to(new_w / 2, new_h / 2),
            v: self.v.crop_to(new_w / 2, new_h / 2),
        }
    }
}

/// Frames plus the pre-padding geometry so output can be cropped back.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    pub fps: f64,
    /// Original dimensions before alignment padding.
    pub orig_width: usize,
    pub orig_height: usize,
}

impl Sequence {
    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width())
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height())
    }

    pub fn crop_to_original(&self) -> Sequence {
        Sequence {
            frames: self
                .frames
                .iter()
                .map(|f| f.crop_to(self.orig_width, self.orig_height))
                .collect(),
            fps: self.fps,
            orig_width: self.orig_width,
            orig_height: self.orig_height,
        }
    }
}
