"""Semantic class table shared by every module.

Ids follow the column order of the usual KITTI-360 BEV benchmark table.
"""

ROAD = 0
SIDEWALK = 1
BUILDING = 2
TERRAIN = 3
PERSON = 4
TWO_WHEELER = 5
CAR = 6
TRUCK = 7

IGNORE = 255

NUM_CLASSES = 8

CLASS_NAMES = ("road", "sidewalk", "building", "terrain", "person", "two_wheeler", "car", "truck")
DISPLAY_NAMES = ("Road", "Sidewalk", "Building", "Terrain", "Person", "2-Wheeler", "Car", "Truck")

STATIC_CLASSES = (ROAD, SIDEWALK, BUILDING, TERRAIN)
DYNAMIC_CLASSES = (PERSON, TWO_WHEELER, CAR, TRUCK)

# later entries overwrite earlier ones when statics compete for a BEV cell
STATIC_PRIORITY = (ROAD, TERRAIN, SIDEWALK, BUILDING)

PALETTE = {
    ROAD: (128, 64, 128),
    SIDEWALK: (244, 35, 232),
    BUILDING: (70, 70, 70),
    TERRAIN: (152, 251, 152),
    PERSON: (220, 20, 60),
    TWO_WHEELER: (119, 11, 32),
    CAR: (0, 0, 142),
    TRUCK: (0, 0, 70),
    IGNORE: (0, 0, 0),
}


def class_id(name):
    """Look up a class id by its snake_case name (``"car"``) or numeric string."""
    name = name.strip().lower().replace("-", "_")
    if name.isdigit():
        cid = int(name)
        if cid >= NUM_CLASSES:
            raise KeyError(name)
        return cid
    if name == "2_wheeler":
        name = "two_wheeler"
    return CLASS_NAMES.index(name)
