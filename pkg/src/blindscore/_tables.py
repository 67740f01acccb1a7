"""Fixed-point lookup tables (generated by scripts/gen_tables.py).

Do not edit by hand. The tables are part of the cross-party numeric contract:
both sides of the protocol must use byte-identical constants or trace
recomputation stops being bit-exact.
"""

TABLE_ENTRIES = 256
LN2_RAW = 45426
LOG2E_RAW = 94548

EXP2_TABLE = (
    65536, 65714, 65892, 66071, 66250, 66429, 66609, 66790,
    66971, 67153, 67335, 67517, 67700, 67884, 68068, 68252,
    68438, 68623, 68809, 68996, 69183, 69370, 69558, 69747,
    69936, 70126, 70316, 70507, 70698, 70889, 71082, 71274,
    71468, 71661, 71856, 72050, 72246, 72442, 72638, 72835,
    73032, 73230, 73429, 73628, 73828, 74028, 74229, 74430,
    74632, 74834, 75037, 75240, 75444, 75649, 75854, 76060,
    76266, 76473, 76680, 76888, 77096, 77305, 77515, 77725,
    77936, 78147, 78359, 78572, 78785, 78998, 79212, 79427,
    79642, 79858, 80075, 80292, 80510, 80728, 80947, 81166,
    81386, 81607, 81828, 82050, 82273, 82496, 82719, 82944,
    83169, 83394, 83620, 83847, 84074, 84302, 84531, 84760,
    84990, 85220, 85451, 85683, 85915, 86148, 86382, 86616,
    86851, 87086, 87322, 87559, 87796, 88034, 88273, 88513,
    88752, 88993, 89234, 89476, 89719, 89962, 90206, 90451,
    90696, 90942, 91188, 91436, 91684, 91932, 92181, 92431,
    92682, 92933, 93185, 93438, 93691, 93945, 94200, 94455,
    94711, 94968, 95226, 95484, 95743, 96002, 96263, 96524,
    96785, 97048, 97311, 97575, 97839, 98104, 98370, 98637,
    98905, 99173, 99442, 99711, 99982, 100253, 100524, 100797,
    101070, 101344, 101619, 101895, 102171, 102448, 102726, 103004,
    103283, 103564, 103844, 104126, 104408, 104691, 104975, 105260,
    105545, 105831, 106118, 106406, 106694, 106984, 107274, 107565,
    107856, 108149, 108442, 108736, 109031, 109326, 109623, 109920,
    110218, 110517, 110816, 111117, 111418, 111720, 112023, 112327,
    112631, 112937, 113243, 113550, 113858, 114167, 114476, 114787,
    115098, 115410, 115723, 116036, 116351, 116667, 116983, 117300,
    117618, 117937, 118257, 118577, 118899, 119221, 119544, 119869,
    120194, 120519, 120846, 121174, 121502, 121832, 122162, 122493,
    122825, 123158, 123492, 123827, 124163, 124500, 124837, 125176,
    125515, 125855, 126197, 126539, 126882, 127226, 127571, 127917,
    128263, 128611, 128960, 129310, 129660, 130012, 130364, 130718,
    131072,
)

LN1P_TABLE = (
    0, 256, 510, 764, 1016, 1268, 1518, 1768,
    2017, 2264, 2511, 2757, 3002, 3246, 3489, 3732,
    3973, 4214, 4453, 4692, 4930, 5167, 5403, 5638,
    5873, 6106, 6339, 6571, 6802, 7033, 7262, 7491,
    7719, 7946, 8173, 8398, 8623, 8847, 9070, 9293,
    9515, 9736, 9956, 10176, 10394, 10612, 10830, 11046,
    11262, 11478, 11692, 11906, 12119, 12332, 12543, 12754,
    12965, 13174, 13383, 13592, 13800, 14007, 14213, 14419,
    14624, 14828, 15032, 15235, 15438, 15640, 15841, 16042,
    16242, 16442, 16641, 16839, 17037, 17234, 17430, 17626,
    17821, 18016, 18210, 18404, 18597, 18790, 18981, 19173,
    19364, 19554, 19743, 19933, 20121, 20309, 20497, 20684,
    20870, 21056, 21241, 21426, 21611, 21795, 21978, 22161,
    22343, 22525, 22706, 22887, 23067, 23247, 23426, 23605,
    23783, 23961, 24139, 24315, 24492, 24668, 24843, 25018,
    25193, 25367, 25540, 25714, 25886, 26059, 26230, 26402,
    26573, 26743, 26913, 27083, 27252, 27420, 27589, 27756,
    27924, 28091, 28257, 28424, 28589, 28754, 28919, 29084,
    29248, 29412, 29575, 29738, 29900, 30062, 30224, 30385,
    30546, 30706, 30866, 31026, 31185, 31344, 31502, 31661,
    31818, 31976, 32133, 32289, 32445, 32601, 32757, 32912,
    33067, 33221, 33375, 33529, 33682, 33835, 33987, 34140,
    34292, 34443, 34594, 34745, 34896, 35046, 35196, 35345,
    35494, 35643, 35791, 35939, 36087, 36235, 36382, 36529,
    36675, 36821, 36967, 37112, 37258, 37402, 37547, 37691,
    37835, 37979, 38122, 38265, 38407, 38550, 38692, 38833,
    38975, 39116, 39257, 39397, 39537, 39677, 39817, 39956,
    40095, 40234, 40372, 40510, 40648, 40786, 40923, 41060,
    41196, 41333, 41469, 41605, 41740, 41876, 42011, 42145,
    42280, 42414, 42548, 42681, 42815, 42948, 43081, 43213,
    43345, 43477, 43609, 43741, 43872, 44003, 44133, 44264,
    44394, 44524, 44654, 44783, 44912, 45041, 45170, 45298,
    45426,
)
